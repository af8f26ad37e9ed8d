#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lrinfer/error.hpp"

namespace lrinfer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// An N x T outcome matrix together with its observation mask.
///
/// The mask is the single source of truth for which cells carry data.
/// Whatever the caller stores in unobserved cells is discarded and replaced
/// by 0, so no downstream computation can pick up a sentinel by accident.
/// Every row and every column must contain at least one observed cell.
class ObservedPanel {
 public:
  ObservedPanel(Matrix values, Matrix mask) : values_(std::move(values)), mask_(std::move(mask)) {
    detail::require(values_.rows() == mask_.rows() && values_.cols() == mask_.cols(),
                    ErrorCode::ShapeMismatch, "values and mask dimensions differ");
    detail::require(values_.rows() > 0 && values_.cols() > 0, ErrorCode::ShapeMismatch,
                    "panel must have at least one unit and one period");
    for (Index t = 0; t < mask_.cols(); ++t) {
      for (Index i = 0; i < mask_.rows(); ++i) {
        const double w = mask_(i, t);
        detail::require(w == 0.0 || w == 1.0, ErrorCode::InvalidArgument,
                        "mask entries must be exactly 0 or 1");
        if (w == 0.0) {
          values_(i, t) = 0.0;
        } else {
          detail::require(std::isfinite(values_(i, t)), ErrorCode::NonFinite,
                          "observed value at unit " + std::to_string(i) + ", period " +
                              std::to_string(t) + " is not finite",
                          i);
        }
      }
    }
    for (Index i = 0; i < mask_.rows(); ++i) {
      detail::require(mask_.row(i).sum() > 0.0, ErrorCode::EmptyRow,
                      "unit " + std::to_string(i) + " has no observed periods", i);
    }
    for (Index t = 0; t < mask_.cols(); ++t) {
      detail::require(mask_.col(t).sum() > 0.0, ErrorCode::EmptyColumn,
                      "period " + std::to_string(t) + " has no observed units", t);
    }
  }

  /// Fully observed panel.
  static ObservedPanel complete(Matrix values) {
    Matrix mask = Matrix::Ones(values.rows(), values.cols());
    return ObservedPanel(std::move(values), std::move(mask));
  }

  Index n_units() const noexcept { return values_.rows(); }
  Index n_periods() const noexcept { return values_.cols(); }
  const Matrix& values() const noexcept { return values_; }
  const Matrix& mask() const noexcept { return mask_; }
  bool observed(Index i, Index t) const { return mask_(i, t) != 0.0; }
  double n_observed() const { return mask_.sum(); }

 private:
  Matrix values_;
  Matrix mask_;
};

/// Row-wise observation probabilities p_i used for inverse probability
/// weighting. Each entry lies in [1/T, 1].
struct PropensityEstimate {
  Vector p_hat;

  Index size() const noexcept { return p_hat.size(); }
  double min() const { return p_hat.minCoeff(); }
};

/// A rectangle of unit indices x period indices (0-based).
class GroupSpec {
 public:
  GroupSpec(std::vector<Index> units, std::vector<Index> periods)
      : units_(std::move(units)), periods_(std::move(periods)) {
    detail::require(!units_.empty(), ErrorCode::InvalidArgument, "group has no units");
    detail::require(!periods_.empty(), ErrorCode::InvalidArgument, "group has no periods");
    require_unique(units_, "unit");
    require_unique(periods_, "period");
  }

  static GroupSpec single(Index unit, Index period) { return GroupSpec({unit}, {period}); }
  /// All units at one period.
  static GroupSpec column(Index period, Index n_units) { return GroupSpec(iota(n_units), {period}); }
  /// One unit over all periods.
  static GroupSpec row(Index unit, Index n_periods) { return GroupSpec({unit}, iota(n_periods)); }
  static GroupSpec all(Index n_units, Index n_periods) {
    return GroupSpec(iota(n_units), iota(n_periods));
  }

  const std::vector<Index>& units() const noexcept { return units_; }
  const std::vector<Index>& periods() const noexcept { return periods_; }
  Index size() const noexcept { return static_cast<Index>(units_.size() * periods_.size()); }

  void check_bounds(Index n_units, Index n_periods) const {
    for (Index i : units_) {
      detail::require(i >= 0 && i < n_units, ErrorCode::OutOfRange,
                      "group unit index " + std::to_string(i) + " out of range", i);
    }
    for (Index t : periods_) {
      detail::require(t >= 0 && t < n_periods, ErrorCode::OutOfRange,
                      "group period index " + std::to_string(t) + " out of range", t);
    }
  }

  /// |G|^{-1} sum over the rectangle.
  double average(const Matrix& m) const {
    double sum = 0.0;
    for (Index t : periods_) {
      for (Index i : units_) sum += m(i, t);
    }
    return sum / static_cast<double>(size());
  }

 private:
  static std::vector<Index> iota(Index n) {
    std::vector<Index> out(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = k;
    return out;
  }

  static void require_unique(std::vector<Index> idx, const char* what) {
    std::sort(idx.begin(), idx.end());
    const auto dup = std::adjacent_find(idx.begin(), idx.end());
    detail::require(dup == idx.end(), ErrorCode::InvalidArgument,
                    std::string("duplicate ") + what + " index in group");
  }

  std::vector<Index> units_;
  std::vector<Index> periods_;
};

namespace detail {

/// Observed fraction of each row, floored at 1/T. Rows without any
/// observation get the floor when `allow_empty_rows` is set.
inline Vector row_propensity(const Matrix& mask, bool allow_empty_rows) {
  const Index n = mask.rows();
  const double t = static_cast<double>(mask.cols());
  Vector p(n);
  for (Index i = 0; i < n; ++i) {
    const double count = mask.row(i).sum();
    require(allow_empty_rows || count > 0.0, ErrorCode::EmptyRow,
            "unit " + std::to_string(i) + " has no observed periods", i);
    p(i) = std::max(count / t, 1.0 / t);
  }
  return p;
}

/// 0.5 * sum_it w_it (a_it - y_it)^2 / p_i, with y already zeroed off-mask.
inline double weighted_residual(const Matrix& values, const Matrix& mask, const Vector& p_hat,
                                const Matrix& a) {
  const Matrix diff = mask.cwiseProduct(a - values);
  return 0.5 * (p_hat.cwiseInverse().asDiagonal() * diff.cwiseAbs2()).sum();
}

}  // namespace detail

inline PropensityEstimate estimate_propensity(const ObservedPanel& panel) {
  return PropensityEstimate{detail::row_propensity(panel.mask(), false)};
}

/// 1/2 || Pi^{-1/2} Omega o (A - Y) ||_F^2.
inline double weighted_residual_norm(const ObservedPanel& panel, const PropensityEstimate& prop,
                                     const Matrix& a) {
  detail::require(a.rows() == panel.n_units() && a.cols() == panel.n_periods(),
                  ErrorCode::ShapeMismatch, "candidate matrix shape does not match panel");
  detail::require(prop.size() == panel.n_units(), ErrorCode::ShapeMismatch,
                  "propensity length does not match number of units");
  // Off-mask cells of `a` may hold anything, including non-finite values.
  const Matrix masked_a = panel.mask().select(a, 0.0);
  return detail::weighted_residual(panel.values(), panel.mask(), prop.p_hat, masked_a);
}

}  // namespace lrinfer
