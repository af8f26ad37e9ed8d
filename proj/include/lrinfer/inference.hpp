#pragma once

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>

#include "lrinfer/error.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/two_step.hpp"

namespace lrinfer {

/// Residuals on observed cells (zero elsewhere) and per-unit variances
/// sigma_i^2 = mean of squared residuals over the unit's observed periods.
/// A unit observed once gets the square of its single residual.
struct ResidualModel {
  Vector sigma2_hat;
  Matrix residuals;
};

enum class Sidedness {
  TwoSided,
  Greater,  // H1: target > 0
};

struct InferenceResult {
  double estimate = 0.0;
  double variance = 0.0;
  double std_error = 0.0;
  double t_stat = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double p_value = 1.0;
  double level = 0.95;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// z such that P(Z <= z) = prob.
inline double normal_quantile(double prob) {
  detail::require(prob > 0.0 && prob < 1.0, ErrorCode::OutOfRange,
                  "normal quantile needs a probability in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

/// CI, t-statistic and p-value for H0: target = 0 from a normal reference.
inline InferenceResult make_inference_result(double estimate, double variance, double level,
                                             Sidedness sided = Sidedness::TwoSided) {
  detail::require(level > 0.0 && level < 1.0, ErrorCode::OutOfRange,
                  "confidence level must lie in (0, 1)");
  detail::require(variance >= 0.0, ErrorCode::InvalidArgument, "variance must be nonnegative");
  InferenceResult r;
  r.estimate = estimate;
  r.variance = variance;
  r.level = level;
  r.std_error = std::sqrt(variance);
  const double z = normal_quantile(0.5 * (1.0 + level));
  r.ci_lower = estimate - z * r.std_error;
  r.ci_upper = estimate + z * r.std_error;
  if (r.std_error > 0.0) {
    r.t_stat = estimate / r.std_error;
  } else {
    r.t_stat = estimate == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), estimate);
  }
  if (sided == Sidedness::TwoSided) {
    r.p_value = estimate == 0.0 && r.std_error == 0.0 ? 1.0 : 2.0 * normal_cdf(-std::abs(r.t_stat));
  } else {
    r.p_value = estimate == 0.0 && r.std_error == 0.0 ? 1.0 : normal_cdf(-r.t_stat);
  }
  r.p_value = std::min(1.0, std::max(0.0, r.p_value));
  return r;
}

namespace detail {

inline void require_fit_matches(const ObservedPanel& panel, const FactorFit& fit) {
  require(fit.loadings.rows() == panel.n_units() && fit.factors.rows() == panel.n_periods() &&
              fit.loadings.cols() == fit.factors.cols(),
          ErrorCode::ShapeMismatch, "factor fit does not match panel dimensions");
}

}  // namespace detail

inline ResidualModel compute_residuals(const ObservedPanel& panel, const FactorFit& fit) {
  detail::require_fit_matches(panel, fit);
  ResidualModel model;
  model.residuals = panel.mask().cwiseProduct(panel.values() - fit.loadings * fit.factors.transpose());
  model.sigma2_hat = model.residuals.cwiseAbs2().rowwise().sum().cwiseQuotient(
      panel.mask().rowwise().sum());
  return model;
}

/// The two summands of the feasible group variance.
struct GroupVarianceTerms {
  double factor_term = 0.0;   // sandwich over periods, uncertainty in F^
  double loading_term = 0.0;  // sum over units, uncertainty in beta^
  double total() const { return factor_term + loading_term; }
};

inline GroupVarianceTerms group_variance_terms(const ObservedPanel& panel, const FactorFit& fit,
                                               const ResidualModel& resid,
                                               const GroupSpec& group) {
  detail::require_fit_matches(panel, fit);
  detail::require(resid.sigma2_hat.size() == panel.n_units(), ErrorCode::ShapeMismatch,
                  "residual model does not match panel");
  group.check_bounds(panel.n_units(), panel.n_periods());
  const Matrix& beta = fit.loadings;
  const Matrix& f = fit.factors;
  const Matrix& mask = panel.mask();
  const double n_units = static_cast<double>(group.units().size());
  const double n_periods = static_cast<double>(group.periods().size());

  Vector beta_bar = Vector::Zero(beta.cols());
  for (Index i : group.units()) beta_bar += beta.row(i).transpose();
  beta_bar /= n_units;
  Vector f_bar = Vector::Zero(f.cols());
  for (Index t : group.periods()) f_bar += f.row(t).transpose();
  f_bar /= n_periods;

  GroupVarianceTerms terms;
  for (Index t : group.periods()) {
    const Matrix weighted = mask.col(t).asDiagonal() * beta;
    const Matrix gram = beta.transpose() * weighted;
    const Matrix middle = weighted.transpose() * resid.sigma2_hat.asDiagonal() * beta;
    const Vector a = detail::gram_inverse(gram, "period", t) * beta_bar;
    terms.factor_term += a.dot(middle * a);
  }
  terms.factor_term /= n_periods * n_periods;

  for (Index i : group.units()) {
    const Matrix gram = f.transpose() * mask.row(i).transpose().asDiagonal() * f;
    terms.loading_term += resid.sigma2_hat(i) * f_bar.dot(detail::gram_inverse(gram, "unit", i) * f_bar);
  }
  terms.loading_term /= n_units * n_units;
  return terms;
}

/// Feasible variance of the group average of M^.
inline double group_variance(const ObservedPanel& panel, const FactorFit& fit,
                             const ResidualModel& resid, const GroupSpec& group) {
  return group_variance_terms(panel, fit, resid, group).total();
}

inline InferenceResult group_average_ci(const ObservedPanel& panel, const FactorFit& fit,
                                        const ResidualModel& resid, const GroupSpec& group,
                                        double level = 0.95,
                                        Sidedness sided = Sidedness::TwoSided) {
  const double v = group_variance(panel, fit, resid, group);
  return make_inference_result(group.average(fit.m_hat), v, level, sided);
}

inline InferenceResult group_average_ci(const ObservedPanel& panel, const FactorFit& fit,
                                        const GroupSpec& group, double level = 0.95,
                                        Sidedness sided = Sidedness::TwoSided) {
  return group_average_ci(panel, fit, compute_residuals(panel, fit), group, level, sided);
}

}  // namespace lrinfer
