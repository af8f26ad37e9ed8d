#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "lrinfer/error.hpp"
#include "lrinfer/panel.hpp"

#if EIGEN_VERSION_AT_LEAST(3, 4, 1)
namespace lrinfer::detail {
template <class M>
using DivideConquerSvd = Eigen::BDCSVD<M>;
}
#else
#include "lrinfer/detail/patched_bdcsvd.hpp"
namespace lrinfer::detail {
template <class M>
using DivideConquerSvd = Eigen::PatchedBDCSVD<M>;
}
#endif

namespace lrinfer {

/// Thin SVD A = U diag(s) V' with s nonincreasing.
struct Svd {
  Matrix u;  // rows(A) x r
  Vector s;  // r = min(rows, cols)
  Matrix v;  // cols(A) x r

  Matrix reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

namespace detail {

/// Flip each singular pair so the left vector's largest-magnitude entry is
/// positive; ties go to the lowest row index.
inline void canonicalize_signs(Svd& svd) {
  for (Index k = 0; k < svd.u.cols(); ++k) {
    Index best = 0;
    double best_abs = -1.0;
    for (Index i = 0; i < svd.u.rows(); ++i) {
      const double a = std::abs(svd.u(i, k));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (svd.u(best, k) < 0.0) {
      svd.u.col(k) *= -1.0;
      svd.v.col(k) *= -1.0;
    }
  }
}

inline void require_finite(const Matrix& a) {
  require(a.allFinite(), ErrorCode::NonFinite, "matrix contains non-finite entries");
}

}  // namespace detail

/// Thin SVD with the deterministic sign convention (Eigen divide and conquer).
inline Svd svd(const Matrix& a) {
  detail::require_finite(a);
  const Index r = std::min(a.rows(), a.cols());
  if (r == 0) return Svd{Matrix(a.rows(), 0), Vector(0), Matrix(a.cols(), 0)};
  detail::DivideConquerSvd<Matrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out{dec.matrixU(), dec.singularValues(), dec.matrixV()};
  detail::canonicalize_signs(out);
  return out;
}

/// Singular values only, nonincreasing.
inline Vector singular_values(const Matrix& a) {
  detail::require_finite(a);
  if (std::min(a.rows(), a.cols()) == 0) return Vector(0);
  return detail::DivideConquerSvd<Matrix>(a).singularValues();
}

inline double nuclear_norm(const Matrix& a) { return singular_values(a).sum(); }

/// Count of singular values above `rel` times the largest one.
inline Index numerical_rank(const Vector& s, double rel = 1e-10) {
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  const double cut = rel * s(0);
  Index r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  return r;
}

/// Result of the singular value shrinkage operator, keeping the factors so
/// callers can reuse the shrunken spectrum without another decomposition.
struct ShrunkSvd {
  Matrix matrix;
  Vector singular_values;  // max(s - tau, 0), nonincreasing
};

inline ShrunkSvd soft_threshold_svd_full(const Matrix& a, double tau) {
  detail::require(tau >= 0.0, ErrorCode::InvalidArgument, "threshold must be nonnegative");
  if (tau == 0.0) return ShrunkSvd{a, singular_values(a)};
  Svd d = svd(a);
  Vector shrunk = (d.s.array() - tau).max(0.0).matrix();
  const Index keep = numerical_rank(shrunk, 0.0);
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  if (keep > 0) {
    out.noalias() = d.u.leftCols(keep) * shrunk.head(keep).asDiagonal() *
                    d.v.leftCols(keep).transpose();
  }
  return ShrunkSvd{std::move(out), std::move(shrunk)};
}

/// Proximal operator of tau * ||.||_*: U max(D - tau I, 0) V'.
inline Matrix soft_threshold_svd(const Matrix& a, double tau) {
  return soft_threshold_svd_full(a, tau).matrix;
}

}  // namespace lrinfer
