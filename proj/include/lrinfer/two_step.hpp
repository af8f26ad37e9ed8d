#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lrinfer/error.hpp"
#include "lrinfer/nuclear_solver.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/svd.hpp"

namespace lrinfer {

/// Loadings and factors from the two-step least-squares refit, and the
/// completed matrix M^ = loadings * factors'.
struct FactorFit {
  int k = 0;
  Matrix beta_init;  // N x K, columns sqrt(N) times orthonormal left singular vectors
  Matrix factors;    // T x K
  Matrix loadings;   // N x K
  Matrix m_hat;      // N x T
};

namespace detail {

inline constexpr double kMaxGramCondition = 1e12;

/// Inverse of a small symmetric positive definite Gram matrix. Fails with
/// SingularDesign when its condition number reaches 1e12.
inline Matrix gram_inverse(const Matrix& gram, const char* axis, Index index) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector& ev = eig.eigenvalues();  // ascending
  const double hi = ev(ev.size() - 1);
  const double lo = ev(0);
  require(hi > 0.0 && lo > 0.0 && hi < kMaxGramCondition * lo, ErrorCode::SingularDesign,
          std::string("design matrix for ") + axis + " " + std::to_string(index) +
              " is singular or ill-conditioned",
          index);
  return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

/// Per-column OLS of `values` on `design` using only cells where mask == 1:
/// row t of the result is (sum_j w_jt d_j d_j')^{-1} sum_j w_jt d_j y_jt.
inline Matrix masked_column_ols(const Matrix& values, const Matrix& mask, const Matrix& design,
                                const char* axis) {
  const Index k = design.cols();
  Matrix coef(values.cols(), k);
  for (Index t = 0; t < values.cols(); ++t) {
    const Matrix weighted = mask.col(t).asDiagonal() * design;
    const Matrix gram = design.transpose() * weighted;
    const Vector rhs = weighted.transpose() * values.col(t);
    coef.row(t) = (gram_inverse(gram, axis, t) * rhs).transpose();
  }
  return coef;
}

/// sqrt(N) times the top-k left singular vectors of `m`.
inline Matrix scaled_left_vectors(const Matrix& m, int k) {
  require(k >= 1, ErrorCode::InvalidArgument, "sieve dimension k must be positive");
  const Svd d = svd(m);
  const Index rank = numerical_rank(d.s);
  require(k <= rank, ErrorCode::RankDeficient,
          "k = " + std::to_string(k) + " exceeds the numerical rank " + std::to_string(rank) +
              " of the penalized estimate");
  return std::sqrt(static_cast<double>(m.rows())) * d.u.leftCols(k);
}

inline FactorFit zero_fit(Index n, Index t, int k) {
  FactorFit fit;
  fit.k = k;
  fit.beta_init = Matrix::Zero(n, k);
  for (Index c = 0; c < k && c < n; ++c) fit.beta_init(c, c) = std::sqrt(static_cast<double>(n));
  fit.factors = Matrix::Zero(t, k);
  fit.loadings = Matrix::Zero(n, k);
  fit.m_hat = Matrix::Zero(n, t);
  return fit;
}

}  // namespace detail

/// Initial loadings beta~: sqrt(N) x the top-k left singular vectors of M~.
inline Matrix initial_loadings(const LowRankEstimate& est, int k) {
  return detail::scaled_left_vectors(est.m_tilde, k);
}

/// Per-period OLS of observed outcomes on the loadings (T x K result).
inline Matrix estimate_factors(const ObservedPanel& panel, const Matrix& beta) {
  detail::require(beta.rows() == panel.n_units(), ErrorCode::ShapeMismatch,
                  "loadings must have one row per unit");
  return detail::masked_column_ols(panel.values(), panel.mask(), beta, "period");
}

/// Per-unit OLS of observed outcomes on the factors (N x K result).
inline Matrix estimate_loadings(const ObservedPanel& panel, const Matrix& factors) {
  detail::require(factors.rows() == panel.n_periods(), ErrorCode::ShapeMismatch,
                  "factors must have one row per period");
  const Matrix vt = panel.values().transpose();
  const Matrix mt = panel.mask().transpose();
  return detail::masked_column_ols(vt, mt, factors, "unit");
}

/// Loadings extraction and the two OLS passes on an existing penalized fit.
inline FactorFit tls_refit(const ObservedPanel& panel, const LowRankEstimate& est, int k) {
  detail::require(est.m_tilde.rows() == panel.n_units() && est.m_tilde.cols() == panel.n_periods(),
                  ErrorCode::ShapeMismatch, "penalized estimate shape does not match panel");
  // All-zero data: every regression has a zero response, so M^ = 0 whatever
  // loadings are chosen (the loadings refit would otherwise be singular).
  if (panel.values().isZero(0.0)) return detail::zero_fit(panel.n_units(), panel.n_periods(), k);

  FactorFit fit;
  fit.k = k;
  fit.beta_init = initial_loadings(est, k);
  fit.factors = estimate_factors(panel, fit.beta_init);
  fit.loadings = estimate_loadings(panel, fit.factors);
  fit.m_hat = fit.loadings * fit.factors.transpose();
  detail::require(fit.m_hat.allFinite(), ErrorCode::NonFinite, "refit produced non-finite entries");
  return fit;
}

/// Penalized fit followed by a single two-step least-squares refit.
inline FactorFit tls_fit(const ObservedPanel& panel, int k, const SolverOptions& opts = {}) {
  const PropensityEstimate prop = estimate_propensity(panel);
  const LowRankEstimate est = solve_nuclear_norm(panel, prop, opts);
  return tls_refit(panel, est, k);
}

namespace detail {

inline std::vector<Index> periods_with_parity(Index t, int parity) {
  std::vector<Index> out;
  for (Index s = parity; s < t; s += 2) out.push_back(s);
  return out;
}

inline Matrix take_columns(const Matrix& m, const std::vector<Index>& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Index>(c)) = m.col(cols[c]);
  return out;
}

/// Orthogonal O minimizing ||target - source * O||_F.
inline Matrix procrustes(const Matrix& source, const Matrix& target) {
  const Svd d = svd(source.transpose() * target);
  return d.u * d.v.transpose();
}

}  // namespace detail

/// Sample-splitting benchmark: loadings for even periods come from the odd
/// half and vice versa, then loadings are refit on the full panel. Halves
/// are even/odd period indices; `seed` is accepted for interface stability
/// but the split is deterministic.
inline FactorFit tls_fit_sample_split(const ObservedPanel& panel, int k,
                                      const SolverOptions& opts = {}, std::uint64_t seed = 0) {
  (void)seed;
  opts.validate();
  const Index n = panel.n_units();
  const Index t = panel.n_periods();
  detail::require(t >= 4, ErrorCode::TooFewPeriods,
                  "sample splitting needs at least 4 periods, got " + std::to_string(t));
  if (panel.values().isZero(0.0)) return detail::zero_fit(n, t, k);

  const std::vector<Index> halves[2] = {detail::periods_with_parity(t, 0),
                                        detail::periods_with_parity(t, 1)};
  Matrix half_values[2];
  Matrix half_mask[2];
  Matrix half_beta[2];
  for (int h = 0; h < 2; ++h) {
    half_values[h] = detail::take_columns(panel.values(), halves[h]);
    half_mask[h] = detail::take_columns(panel.mask(), halves[h]);
    // Units may be unobserved within one half; they get the propensity
    // floor and zero weight in that half's objective.
    const Vector p_hat = detail::row_propensity(half_mask[h], true);
    const double lambda = opts.lambda ? *opts.lambda
                                      : detail::default_lambda(half_values[h], half_mask[h],
                                                               opts.lambda_scale);
    const LowRankEstimate est =
        detail::solve_weighted(half_values[h], half_mask[h], p_hat, lambda, opts);
    half_beta[h] = detail::scaled_left_vectors(est.m_tilde, k);
  }
  // Express the odd-half loadings in the even-half basis so both halves'
  // factor estimates share one rotation.
  half_beta[1] = half_beta[1] * detail::procrustes(half_beta[1], half_beta[0]);

  FactorFit fit;
  fit.k = k;
  fit.beta_init = half_beta[0];
  fit.factors = Matrix::Zero(t, k);
  for (int h = 0; h < 2; ++h) {
    const Matrix f = detail::masked_column_ols(half_values[h], half_mask[h], half_beta[1 - h], "period");
    for (std::size_t c = 0; c < halves[h].size(); ++c) {
      fit.factors.row(halves[h][c]) = f.row(static_cast<Index>(c));
    }
  }
  fit.loadings = estimate_loadings(panel, fit.factors);
  fit.m_hat = fit.loadings * fit.factors.transpose();
  detail::require(fit.m_hat.allFinite(), ErrorCode::NonFinite, "refit produced non-finite entries");
  return fit;
}

}  // namespace lrinfer
