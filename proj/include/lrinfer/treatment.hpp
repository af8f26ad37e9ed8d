#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lrinfer/error.hpp"
#include "lrinfer/inference.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/two_step.hpp"

namespace lrinfer {

/// Realized outcomes with a binary treatment indicator. `available` marks
/// cells that carry an outcome at all (all ones for a balanced panel).
class TreatmentPanel {
 public:
  TreatmentPanel(Matrix outcomes, Matrix treat)
      : TreatmentPanel(outcomes, treat, Matrix::Ones(outcomes.rows(), outcomes.cols())) {}

  TreatmentPanel(Matrix outcomes, Matrix treat, Matrix available)
      : outcomes_(std::move(outcomes)), treat_(std::move(treat)), available_(std::move(available)) {
    detail::require(outcomes_.rows() == treat_.rows() && outcomes_.cols() == treat_.cols() &&
                        outcomes_.rows() == available_.rows() &&
                        outcomes_.cols() == available_.cols(),
                    ErrorCode::ShapeMismatch, "outcome, treatment and availability shapes differ");
    for (Index t = 0; t < treat_.cols(); ++t) {
      for (Index i = 0; i < treat_.rows(); ++i) {
        const double u = treat_(i, t);
        const double a = available_(i, t);
        detail::require((u == 0.0 || u == 1.0) && (a == 0.0 || a == 1.0),
                        ErrorCode::InvalidArgument, "treatment and availability must be 0 or 1");
        if (a == 0.0) {
          outcomes_(i, t) = 0.0;
          treat_(i, t) = 0.0;
        }
      }
    }
  }

  Index n_units() const noexcept { return outcomes_.rows(); }
  Index n_periods() const noexcept { return outcomes_.cols(); }
  const Matrix& outcomes() const noexcept { return outcomes_; }
  const Matrix& treat() const noexcept { return treat_; }
  const Matrix& available() const noexcept { return available_; }

 private:
  Matrix outcomes_;
  Matrix treat_;
  Matrix available_;
};

struct ArmPanels {
  ObservedPanel control;  // mask 1 - treat
  ObservedPanel treated;  // mask treat
};

namespace detail {

template <class Fn>
auto with_arm_label(const char* arm, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DidNotConvergeError&) {
    throw;
  } catch (const Error& e) {
    throw Error(e.code(), std::string(arm) + " arm: " + e.message(), e.index());
  }
}

}  // namespace detail

inline ArmPanels split_arms(const TreatmentPanel& tp) {
  const Matrix treated_mask = tp.available().cwiseProduct(tp.treat());
  const Matrix control_mask = tp.available() - treated_mask;
  ObservedPanel control =
      detail::with_arm_label("control", [&] { return ObservedPanel(tp.outcomes(), control_mask); });
  ObservedPanel treated =
      detail::with_arm_label("treated", [&] { return ObservedPanel(tp.outcomes(), treated_mask); });
  return ArmPanels{std::move(control), std::move(treated)};
}

/// Sieve dimension and solver settings for one arm.
struct ArmSettings {
  int k = 2;
  SolverOptions solver;
};

/// Both arms fit once; reusable across many groups.
struct TreatmentFit {
  ArmPanels arms;
  FactorFit control_fit;
  FactorFit treated_fit;
  ResidualModel control_resid;
  ResidualModel treated_resid;

  Matrix effects() const { return treated_fit.m_hat - control_fit.m_hat; }
};

struct AteResult {
  InferenceResult inference;  // variance = control + treated
  double variance_control = 0.0;
  double variance_treated = 0.0;
};

inline TreatmentFit fit_treatment(const TreatmentPanel& tp, const ArmSettings& control,
                                  const ArmSettings& treated) {
  ArmPanels arms = split_arms(tp);
  FactorFit f0 = detail::with_arm_label(
      "control", [&] { return tls_fit(arms.control, control.k, control.solver); });
  FactorFit f1 = detail::with_arm_label(
      "treated", [&] { return tls_fit(arms.treated, treated.k, treated.solver); });
  ResidualModel r0 = compute_residuals(arms.control, f0);
  ResidualModel r1 = compute_residuals(arms.treated, f1);
  return TreatmentFit{std::move(arms), std::move(f0), std::move(f1), std::move(r0), std::move(r1)};
}

inline AteResult ate_for_group(const TreatmentFit& fit, const GroupSpec& group, double level = 0.95,
                               Sidedness sided = Sidedness::TwoSided) {
  AteResult out;
  out.variance_control = detail::with_arm_label("control", [&] {
    return group_variance(fit.arms.control, fit.control_fit, fit.control_resid, group);
  });
  out.variance_treated = detail::with_arm_label("treated", [&] {
    return group_variance(fit.arms.treated, fit.treated_fit, fit.treated_resid, group);
  });
  const double estimate = group.average(fit.treated_fit.m_hat) - group.average(fit.control_fit.m_hat);
  out.inference =
      make_inference_result(estimate, out.variance_control + out.variance_treated, level, sided);
  return out;
}

inline AteResult ate_inference(const TreatmentPanel& tp, const GroupSpec& group,
                               const ArmSettings& control, const ArmSettings& treated,
                               double level = 0.95, Sidedness sided = Sidedness::TwoSided) {
  return ate_for_group(fit_treatment(tp, control, treated), group, level, sided);
}

inline AteResult ate_inference(const TreatmentPanel& tp, const GroupSpec& group, int k,
                               const SolverOptions& opts = {}, double level = 0.95,
                               Sidedness sided = Sidedness::TwoSided) {
  const ArmSettings arm{k, opts};
  return ate_inference(tp, group, arm, arm, level, sided);
}

/// Benjamini-Hochberg step-up rule at level q. Returns the rejected
/// hypotheses' indices in ascending order.
inline std::vector<std::size_t> bh_fdr(const std::vector<double>& p_values, double q) {
  detail::require(q > 0.0 && q < 1.0, ErrorCode::OutOfRange, "FDR level must lie in (0, 1)");
  for (std::size_t j = 0; j < p_values.size(); ++j) {
    detail::require(p_values[j] >= 0.0 && p_values[j] <= 1.0, ErrorCode::OutOfRange,
                    "p-value " + std::to_string(j) + " outside [0, 1]",
                    static_cast<std::ptrdiff_t>(j));
  }
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::optional<double> cutoff;
  for (std::size_t r = m; r >= 1; --r) {
    const double p = p_values[order[r - 1]];
    if (p <= static_cast<double>(r) * q / static_cast<double>(m)) {
      cutoff = p;
      break;
    }
  }
  std::vector<std::size_t> rejected;
  if (!cutoff) return rejected;
  for (std::size_t j = 0; j < m; ++j) {
    if (p_values[j] <= *cutoff) rejected.push_back(j);
  }
  return rejected;
}

}  // namespace lrinfer
