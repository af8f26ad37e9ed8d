#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lrinfer/error.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/svd.hpp"

namespace lrinfer {

enum class StepRule {
  Lipschitz,     // 1/L with L = 1 / min_i p_i
  Fixed,         // caller-supplied step
  Backtracking,  // "auto": shrink until the quadratic upper bound holds
};

struct SolverOptions {
  /// Penalty weight. Empty means "auto": default_lambda() on the panel.
  std::optional<double> lambda;
  /// Multiplier c in the automatic penalty c * sigma * sqrt(max(N, T)).
  double lambda_scale = 2.0;
  int max_iters = 500;
  double rel_tol = 1e-7;
  StepRule step_rule = StepRule::Lipschitz;
  double step_size = 0.0;  // used only with StepRule::Fixed
  /// Throw DidNotConvergeError instead of returning converged = false.
  bool fail_on_nonconvergence = false;

  void validate() const {
    detail::require(rel_tol > 0.0, ErrorCode::InvalidArgument, "rel_tol must be positive");
    detail::require(max_iters >= 1, ErrorCode::InvalidArgument, "max_iters must be at least 1");
    detail::require(!lambda || (*lambda >= 0.0 && std::isfinite(*lambda)),
                    ErrorCode::InvalidArgument, "lambda must be a nonnegative finite number");
    detail::require(lambda_scale >= 0.0, ErrorCode::InvalidArgument,
                    "lambda_scale must be nonnegative");
    detail::require(step_rule != StepRule::Fixed || step_size > 0.0, ErrorCode::InvalidArgument,
                    "fixed step size must be positive");
  }
};

/// The penalized estimate M~ and the run that produced it.
struct LowRankEstimate {
  Matrix m_tilde;
  Vector singular_values;  // of m_tilde, nonincreasing
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations = 0;
  double lambda = 0.0;
};

/// Warning-grade failure: the iterate is still usable.
class DidNotConvergeError : public Error {
 public:
  explicit DidNotConvergeError(LowRankEstimate estimate)
      : Error(ErrorCode::DidNotConverge,
              "solver stopped after " + std::to_string(estimate.iterations) +
                  " iterations without meeting the relative tolerance"),
        estimate_(std::move(estimate)) {}

  const LowRankEstimate& estimate() const noexcept { return estimate_; }

 private:
  LowRankEstimate estimate_;
};

namespace detail {

inline double median_inplace(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// 1.4826 * MAD of observed residuals around an additive unit + period fit.
inline double robust_noise_scale(const Matrix& values, const Matrix& mask) {
  const Index n = values.rows();
  const Index t = values.cols();
  Vector row_mean = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    const double cnt = mask.row(i).sum();
    if (cnt > 0.0) row_mean(i) = mask.row(i).dot(values.row(i)) / cnt;
  }
  Vector col_mean = Vector::Zero(t);
  for (Index s = 0; s < t; ++s) {
    double sum = 0.0;
    double cnt = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (mask(i, s) != 0.0) {
        sum += values(i, s) - row_mean(i);
        cnt += 1.0;
      }
    }
    if (cnt > 0.0) col_mean(s) = sum / cnt;
  }
  std::vector<double> resid;
  resid.reserve(static_cast<std::size_t>(mask.sum()));
  for (Index s = 0; s < t; ++s) {
    for (Index i = 0; i < n; ++i) {
      if (mask(i, s) != 0.0) resid.push_back(values(i, s) - row_mean(i) - col_mean(s));
    }
  }
  std::vector<double> work = resid;
  const double center = median_inplace(work);
  for (double& r : resid) r = std::abs(r - center);
  return 1.4826 * median_inplace(resid);
}

inline double default_lambda(const Matrix& values, const Matrix& mask, double scale) {
  const double dim = static_cast<double>(std::max(values.rows(), values.cols()));
  return scale * robust_noise_scale(values, mask) * std::sqrt(dim);
}

/// Accelerated proximal gradient with function-value restart on
///   0.5 * sum_it w_it / p_i (a_it - y_it)^2 + lambda ||A||_*
/// starting from A = 0. Only accepted iterates enter the trace, so it is
/// nonincreasing by construction.
inline LowRankEstimate solve_weighted(const Matrix& values, const Matrix& mask, const Vector& p_hat,
                                      double lambda, const SolverOptions& opts) {
  const Index n = values.rows();
  const Index t = values.cols();
  const Matrix weights = p_hat.cwiseInverse().asDiagonal() * mask;
  const double lipschitz = weights.maxCoeff() > 0.0 ? weights.maxCoeff() : 1.0;

  auto smooth = [&](const Matrix& a) { return 0.5 * weights.cwiseProduct((a - values).cwiseAbs2()).sum(); };

  LowRankEstimate est;
  est.lambda = lambda;
  Matrix x = Matrix::Zero(n, t);
  Vector x_sv = Vector::Zero(std::min(n, t));
  double f_x = smooth(x);
  est.objective_trace.push_back(f_x);

  Matrix z = x;
  bool momentum = false;  // z != x
  double theta = 1.0;
  double step = opts.step_rule == StepRule::Fixed ? opts.step_size : 1.0 / lipschitz;
  // Observed cells carry weight >= 1, so a unit step is the largest useful
  // starting point for backtracking.
  if (opts.step_rule == StepRule::Backtracking) step = 1.0;

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    est.iterations = iter;
    const Matrix grad = weights.cwiseProduct(z - values);
    ShrunkSvd next;
    double f_next = 0.0;
    if (opts.step_rule == StepRule::Backtracking) {
      const double f_z = smooth(z);
      for (;;) {
        next = soft_threshold_svd_full(z - step * grad, lambda * step);
        const Matrix d = next.matrix - z;
        const double smooth_next = smooth(next.matrix);
        const double bound = f_z + grad.cwiseProduct(d).sum() + d.squaredNorm() / (2.0 * step);
        if (smooth_next <= bound * (1.0 + 1e-12) + 1e-300 || step <= 1.0 / lipschitz) {
          f_next = smooth_next + lambda * next.singular_values.sum();
          break;
        }
        step = std::max(0.5 * step, 1.0 / lipschitz);
      }
    } else {
      next = soft_threshold_svd_full(z - step * grad, lambda * step);
      f_next = smooth(next.matrix) + lambda * next.singular_values.sum();
    }

    if (f_next > f_x) {
      if (momentum) {
        // Restart: discard momentum and retry a plain proximal step from x.
        z = x;
        momentum = false;
        theta = 1.0;
        continue;
      }
      // A plain step can only fail to descend through roundoff, or with an
      // oversized fixed step.
      est.converged = (f_next - f_x) <= opts.rel_tol * std::abs(f_x);
      break;
    }

    const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    const double beta = (theta - 1.0) / theta_next;
    z = next.matrix + beta * (next.matrix - x);
    momentum = beta != 0.0;
    theta = theta_next;

    const double change = f_x - f_next;
    const double scale = std::abs(f_x);
    x = std::move(next.matrix);
    x_sv = std::move(next.singular_values);
    f_x = f_next;
    est.objective_trace.push_back(f_x);
    if (change <= opts.rel_tol * scale) {
      est.converged = true;
      break;
    }
  }

  est.m_tilde = std::move(x);
  est.singular_values = std::move(x_sv);
  if (!est.converged && opts.fail_on_nonconvergence) throw DidNotConvergeError(std::move(est));
  return est;
}

}  // namespace detail

/// Penalty c * sigma * sqrt(max(N, T)) with sigma a robust noise scale.
inline double default_lambda(const ObservedPanel& panel, const PropensityEstimate& /*prop*/,
                             double scale = 2.0) {
  return detail::default_lambda(panel.values(), panel.mask(), scale);
}

/// Objective of the weighted nuclear-norm problem at `a`.
inline double nuclear_objective(const ObservedPanel& panel, const PropensityEstimate& prop,
                                const Matrix& a, double lambda) {
  return weighted_residual_norm(panel, prop, a) + lambda * nuclear_norm(a);
}

/// Computes M~ = argmin 1/2 ||Pi^{-1/2} Omega o (A - Y)||_F^2 + lambda ||A||_*.
inline LowRankEstimate solve_nuclear_norm(const ObservedPanel& panel,
                                          const PropensityEstimate& prop,
                                          const SolverOptions& opts = {}) {
  opts.validate();
  detail::require(prop.size() == panel.n_units(), ErrorCode::ShapeMismatch,
                  "propensity length does not match number of units");
  const double lambda = opts.lambda ? *opts.lambda : default_lambda(panel, prop, opts.lambda_scale);
  return detail::solve_weighted(panel.values(), panel.mask(), prop.p_hat, lambda, opts);
}

}  // namespace lrinfer
