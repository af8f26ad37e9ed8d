#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lrinfer/error.hpp"
#include "lrinfer/inference.hpp"
#include "lrinfer/nuclear_solver.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/rank_select.hpp"
#include "lrinfer/treatment.hpp"
#include "lrinfer/two_step.hpp"

namespace lrinfer {

enum class DgpFamily { Factor, Sine, Poly, Treatment };

/// Observation (or treatment) probabilities p_i per unit.
struct MissingSpec {
  enum class Kind { Uniform, Heterogeneous };
  Kind kind = Kind::Heterogeneous;
  double p = 0.5;   // Uniform
  double lo = 0.3;  // Heterogeneous: p_i ~ U[lo, hi]
  double hi = 0.7;

  static MissingSpec uniform(double p) { return {Kind::Uniform, p, 0.0, 0.0}; }
  static MissingSpec heterogeneous(double lo, double hi) { return {Kind::Heterogeneous, 0.0, lo, hi}; }
};

struct DgpSpec {
  DgpFamily family = DgpFamily::Factor;
  Index n = 100;
  Index t = 100;
  double noise_sd = 1.0;
  MissingSpec missing;
  int series_truncation = 100;
  double decay_a = 2.0;  // treatment family only
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(n >= 1 && t >= 1, ErrorCode::InvalidArgument, "dimensions must be positive");
    detail::require(noise_sd >= 0.0, ErrorCode::InvalidArgument, "noise_sd must be nonnegative");
    if (missing.kind == MissingSpec::Kind::Uniform) {
      detail::require(missing.p > 0.0 && missing.p <= 1.0, ErrorCode::InvalidArgument,
                      "uniform observation probability must lie in (0, 1]");
    } else {
      detail::require(missing.lo > 0.0 && missing.lo <= missing.hi && missing.hi <= 1.0,
                      ErrorCode::InvalidArgument, "need 0 < lo <= hi <= 1");
    }
    detail::require(series_truncation >= 1, ErrorCode::InvalidArgument,
                    "series truncation must be at least 1");
    detail::require(family != DgpFamily::Treatment || decay_a > 1.0, ErrorCode::InvalidArgument,
                    "decay parameter a must exceed 1");
  }
};

struct SimDraw {
  Matrix truth;
  ObservedPanel panel;
};

struct TreatmentDraw {
  Matrix control_truth;  // h^(0)
  Matrix treated_truth;  // h^(1)
  Matrix effect;         // h^(1) - h^(0)
  TreatmentPanel panel;
};

/// SplitMix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent, reproducible seed for replication `rep`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t rep) {
  return splitmix64(base ^ splitmix64(rep));
}

namespace detail {

inline Vector draw_probabilities(const MissingSpec& m, Index n, std::mt19937_64& rng) {
  if (m.kind == MissingSpec::Kind::Uniform) return Vector::Constant(n, m.p);
  std::uniform_real_distribution<double> u(m.lo, m.hi);
  Vector p(n);
  for (Index i = 0; i < n; ++i) p(i) = m.lo == m.hi ? m.lo : u(rng);
  return p;
}

inline Matrix draw_mask(const Vector& p, Index t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix mask(p.size(), t);
  for (Index s = 0; s < t; ++s) {
    for (Index i = 0; i < p.size(); ++i) mask(i, s) = u(rng) < p(i) ? 1.0 : 0.0;
  }
  return mask;
}

inline Matrix draw_noise(Index n, Index t, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix e(n, t);
  for (Index s = 0; s < t; ++s) {
    for (Index i = 0; i < n; ++i) e(i, s) = sd * z(rng);
  }
  return e;
}

/// h_t(zeta_i) = sum_{r<=R} coef(t, r) * basis_r(zeta_i).
template <class Basis>
Matrix series_matrix(const Vector& zeta, const Matrix& coef, Basis&& basis) {
  const Index r_max = coef.cols();
  Matrix phi(zeta.size(), r_max);
  for (Index r = 0; r < r_max; ++r) {
    for (Index i = 0; i < zeta.size(); ++i) phi(i, r) = basis(static_cast<double>(r + 1), zeta(i));
  }
  return phi * coef.transpose();
}

}  // namespace detail

/// Factor, sine-series or polynomial-series outcome panel with heterogeneous
/// missingness. Deterministic in `spec.seed`.
inline SimDraw generate_panel(const DgpSpec& spec) {
  spec.validate();
  detail::require(spec.family != DgpFamily::Treatment, ErrorCode::InvalidArgument,
                  "use generate_treatment for the treatment family");
  std::mt19937_64 rng(spec.seed);
  Matrix truth;
  if (spec.family == DgpFamily::Factor) {
    std::normal_distribution<double> g(1.0 / std::sqrt(2.0), 1.0);
    Matrix beta(spec.n, 2);
    Matrix f(spec.t, 2);
    for (Index c = 0; c < 2; ++c) {
      for (Index i = 0; i < spec.n; ++i) beta(i, c) = g(rng);
    }
    for (Index c = 0; c < 2; ++c) {
      for (Index s = 0; s < spec.t; ++s) f(s, c) = g(rng);
    }
    truth = beta * f.transpose();
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> g(2.0, 1.0);
    Vector zeta(spec.n);
    for (Index i = 0; i < spec.n; ++i) zeta(i) = unif(rng);
    Matrix coef(spec.t, spec.series_truncation);
    for (Index s = 0; s < spec.t; ++s) {
      for (Index r = 0; r < coef.cols(); ++r) {
        const double rr = static_cast<double>(r + 1);
        coef(s, r) = std::abs(g(rng)) / (rr * rr * rr);
      }
    }
    if (spec.family == DgpFamily::Sine) {
      truth = detail::series_matrix(zeta, coef, [](double r, double z) { return std::sin(r * z); });
    } else {
      truth = detail::series_matrix(zeta, coef, [](double r, double z) { return std::pow(z, r); });
    }
  }
  const Vector p = detail::draw_probabilities(spec.missing, spec.n, rng);
  Matrix mask = detail::draw_mask(p, spec.t, rng);
  Matrix y = truth + detail::draw_noise(spec.n, spec.t, spec.noise_sd, rng);
  ObservedPanel panel(std::move(y), std::move(mask));
  return SimDraw{std::move(truth), std::move(panel)};
}

/// Potential outcomes h^(0) = sum |U| r^-a sin(r zeta),
/// h^(1) = sum (|U| + 2) r^-a sin(r zeta), U ~ N(0, 1); treatment
/// Bernoulli(p_i) with p_i from `spec.missing`.
inline TreatmentDraw generate_treatment(const DgpSpec& spec) {
  spec.validate();
  detail::require(spec.family == DgpFamily::Treatment, ErrorCode::InvalidArgument,
                  "generate_treatment needs the treatment family");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Vector zeta(spec.n);
  for (Index i = 0; i < spec.n; ++i) zeta(i) = unif(rng);
  Matrix c0(spec.t, spec.series_truncation);
  Matrix c1(spec.t, spec.series_truncation);
  for (Index s = 0; s < spec.t; ++s) {
    for (Index r = 0; r < c0.cols(); ++r) {
      const double decay = std::pow(static_cast<double>(r + 1), -spec.decay_a);
      const double u = std::abs(g(rng));
      c0(s, r) = u * decay;
      c1(s, r) = (u + 2.0) * decay;
    }
  }
  auto sine = [](double r, double z) { return std::sin(r * z); };
  Matrix h0 = detail::series_matrix(zeta, c0, sine);
  Matrix h1 = detail::series_matrix(zeta, c1, sine);
  const Vector p = detail::draw_probabilities(spec.missing, spec.n, rng);
  Matrix treat = detail::draw_mask(p, spec.t, rng);
  const Matrix noise = detail::draw_noise(spec.n, spec.t, spec.noise_sd, rng);
  Matrix y = treat.select(h1, h0) + noise;
  Matrix effect = h1 - h0;
  TreatmentPanel panel(std::move(y), std::move(treat));
  return TreatmentDraw{std::move(h0), std::move(h1), std::move(effect), std::move(panel)};
}

inline std::variant<SimDraw, TreatmentDraw> generate(const DgpSpec& spec) {
  if (spec.family == DgpFamily::Treatment) return generate_treatment(spec);
  return generate_panel(spec);
}

enum class Estimator { Tls, TlsSampleSplit, PlainNuclear };

inline std::string_view estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Tls: return "tls";
    case Estimator::TlsSampleSplit: return "tls_ss";
    case Estimator::PlainNuclear: return "plain_nuclear";
  }
  return "unknown";
}

inline std::string_view family_name(DgpFamily f) {
  switch (f) {
    case DgpFamily::Factor: return "factor";
    case DgpFamily::Sine: return "sine";
    case DgpFamily::Poly: return "poly";
    case DgpFamily::Treatment: return "treatment";
  }
  return "unknown";
}

struct McOptions {
  /// Fixed sieve dimension for every replication (and both arms). When
  /// empty: 2 for the factor family, otherwise cross-validated once on the
  /// first usable replication and then frozen.
  std::optional<int> k;
  std::vector<int> cv_candidates{1, 2, 4, 6, 8, 10};
  SolverOptions solver;
  double level = 0.95;
  double max_failure_rate = 0.10;
};

/// Metrics for one target group in one replication. Standard error, z and
/// coverage are NaN / false when the estimator has no variance formula.
struct TargetOutcome {
  double estimate = 0.0;
  double truth = 0.0;
  double std_error = std::numeric_limits<double>::quiet_NaN();
  double z = std::numeric_limits<double>::quiet_NaN();
  bool has_inference = false;
  bool covered = false;

  double error() const { return estimate - truth; }
  double sq_error() const { return error() * error(); }
};

struct RepRecord {
  int rep = 0;
  std::uint64_t seed = 0;
  double frob_error = 0.0;  // ||M^ - M||_F / sqrt(NT), effects for treatment
  std::vector<TargetOutcome> targets;
};

struct RepFailure {
  int rep = 0;
  std::string message;
};

struct TargetSummary {
  double mean_error = 0.0;
  double mean_sq_error = 0.0;
  double mean_z = std::numeric_limits<double>::quiet_NaN();
  double sd_z = std::numeric_limits<double>::quiet_NaN();
  double ks_stat = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  int n_inference = 0;
};

struct McReport {
  DgpSpec spec;
  Estimator estimator = Estimator::Tls;
  int reps = 0;
  double level = 0.95;
  std::vector<int> k_used;  // one entry, or {control, treated}
  std::vector<GroupSpec> targets;
  std::vector<RepRecord> records;
  std::vector<RepFailure> failures;

  double mean_frob_error = 0.0;
  std::vector<TargetSummary> summaries;
};

/// Kolmogorov-Smirnov distance between the empirical CDF of `x` and N(0, 1).
inline double ks_statistic_normal(std::vector<double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double f = normal_cdf(x[j]);
    d = std::max({d, static_cast<double>(j + 1) / n - f, f - static_cast<double>(j) / n});
  }
  return d;
}

/// Aggregates recomputed from the per-replication rows.
inline void summarize(McReport& report) {
  const std::size_t n_targets = report.targets.size();
  report.summaries.assign(n_targets, TargetSummary{});
  double frob = 0.0;
  for (const RepRecord& r : report.records) frob += r.frob_error;
  const double n_rec = static_cast<double>(report.records.size());
  report.mean_frob_error = report.records.empty() ? std::numeric_limits<double>::quiet_NaN() : frob / n_rec;

  for (std::size_t g = 0; g < n_targets; ++g) {
    TargetSummary& s = report.summaries[g];
    std::vector<double> zs;
    double err = 0.0;
    double sq = 0.0;
    double covered = 0.0;
    for (const RepRecord& r : report.records) {
      const TargetOutcome& o = r.targets[g];
      err += o.error();
      sq += o.sq_error();
      if (o.has_inference) {
        zs.push_back(o.z);
        covered += o.covered ? 1.0 : 0.0;
      }
    }
    s.mean_error = report.records.empty() ? std::numeric_limits<double>::quiet_NaN() : err / n_rec;
    s.mean_sq_error = report.records.empty() ? std::numeric_limits<double>::quiet_NaN() : sq / n_rec;
    s.n_inference = static_cast<int>(zs.size());
    if (!zs.empty()) {
      const double m = static_cast<double>(zs.size());
      double mean = 0.0;
      for (double z : zs) mean += z;
      mean /= m;
      double var = 0.0;
      for (double z : zs) var += (z - mean) * (z - mean);
      s.mean_z = mean;
      s.sd_z = zs.size() > 1 ? std::sqrt(var / (m - 1.0)) : 0.0;
      s.coverage = covered / m;
      s.ks_stat = ks_statistic_normal(zs);
    }
  }
}

namespace detail {

inline double scaled_frobenius(const Matrix& est, const Matrix& truth) {
  return (est - truth).norm() / std::sqrt(static_cast<double>(truth.size()));
}

inline TargetOutcome point_outcome(const GroupSpec& g, const Matrix& est, const Matrix& truth) {
  TargetOutcome o;
  o.estimate = g.average(est);
  o.truth = g.average(truth);
  return o;
}

inline TargetOutcome inference_outcome(const InferenceResult& inf, double truth) {
  TargetOutcome o;
  o.estimate = inf.estimate;
  o.truth = truth;
  o.std_error = inf.std_error;
  o.has_inference = true;
  o.z = inf.std_error > 0.0 ? (inf.estimate - truth) / inf.std_error
                            : (inf.estimate == truth ? 0.0 : std::numeric_limits<double>::infinity());
  o.covered = inf.ci_lower <= truth && truth <= inf.ci_upper;
  return o;
}

}  // namespace detail

/// Monte Carlo over replications for several estimators on shared draws.
/// Replication r uses seed derive_seed(spec.seed, r); TLS and the plain
/// penalized estimate share one solve per replication.
inline std::vector<McReport> run_mc(const DgpSpec& spec, const std::vector<Estimator>& estimators,
                                    int reps, const std::vector<GroupSpec>& targets,
                                    const McOptions& options = {}) {
  spec.validate();
  options.solver.validate();
  detail::require(reps >= 1, ErrorCode::InvalidArgument, "need at least one replication");
  detail::require(!estimators.empty(), ErrorCode::InvalidArgument, "no estimators requested");
  for (const GroupSpec& g : targets) g.check_bounds(spec.n, spec.t);
  const bool treatment = spec.family == DgpFamily::Treatment;
  for (Estimator e : estimators) {
    detail::require(!treatment || e == Estimator::Tls, ErrorCode::InvalidArgument,
                    "the treatment family supports only the tls estimator");
  }

  std::vector<McReport> reports(estimators.size());
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    reports[e].spec = spec;
    reports[e].estimator = estimators[e];
    reports[e].reps = reps;
    reports[e].level = options.level;
    reports[e].targets = targets;
  }

  std::optional<int> k0 = options.k;  // control arm / only arm
  std::optional<int> k1 = options.k;  // treated arm
  if (!k0 && spec.family == DgpFamily::Factor) k0 = 2;

  auto fail_all = [&](int rep, const std::string& msg) {
    for (McReport& r : reports) r.failures.push_back({rep, msg});
  };

  for (int rep = 0; rep < reps; ++rep) {
    DgpSpec rep_spec = spec;
    rep_spec.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(rep));

    if (treatment) {
      std::optional<TreatmentDraw> draw;
      try {
        draw = generate_treatment(rep_spec);
        if (!k0 || !k1) {
          const ArmPanels arms = split_arms(draw->panel);
          const auto cv = [&](const ObservedPanel& p) {
            return rank_cv(p, options.cv_candidates, options.solver, rep_spec.seed).chosen_k;
          };
          k0 = cv(arms.control);
          k1 = cv(arms.treated);
        }
        const TreatmentFit fit =
            fit_treatment(draw->panel, {*k0, options.solver}, {*k1, options.solver});
        RepRecord rec;
        rec.rep = rep;
        rec.seed = rep_spec.seed;
        rec.frob_error = detail::scaled_frobenius(fit.effects(), draw->effect);
        for (const GroupSpec& g : targets) {
          const AteResult ate = ate_for_group(fit, g, options.level);
          rec.targets.push_back(detail::inference_outcome(ate.inference, g.average(draw->effect)));
        }
        reports[0].records.push_back(std::move(rec));
      } catch (const Error& err) {
        fail_all(rep, err.what());
      }
      continue;
    }

    std::optional<SimDraw> draw;
    try {
      draw = generate_panel(rep_spec);
      if (!k0) k0 = rank_cv(draw->panel, options.cv_candidates, options.solver, rep_spec.seed).chosen_k;
    } catch (const Error& err) {
      fail_all(rep, err.what());
      continue;
    }

    std::optional<LowRankEstimate> shared;
    std::optional<Error> shared_error;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      RepRecord rec;
      rec.rep = rep;
      rec.seed = rep_spec.seed;
      try {
        const Estimator which = estimators[e];
        if (which != Estimator::TlsSampleSplit && !shared && !shared_error) {
          try {
            shared = solve_nuclear_norm(draw->panel, estimate_propensity(draw->panel), options.solver);
          } catch (const Error& err) {
            shared_error = err;
          }
        }
        if (which != Estimator::TlsSampleSplit && shared_error) throw *shared_error;

        if (which == Estimator::PlainNuclear) {
          rec.frob_error = detail::scaled_frobenius(shared->m_tilde, draw->truth);
          for (const GroupSpec& g : targets) {
            rec.targets.push_back(detail::point_outcome(g, shared->m_tilde, draw->truth));
          }
        } else if (which == Estimator::TlsSampleSplit) {
          const FactorFit fit = tls_fit_sample_split(draw->panel, *k0, options.solver, rep_spec.seed);
          rec.frob_error = detail::scaled_frobenius(fit.m_hat, draw->truth);
          for (const GroupSpec& g : targets) {
            rec.targets.push_back(detail::point_outcome(g, fit.m_hat, draw->truth));
          }
        } else {
          const FactorFit fit = tls_refit(draw->panel, *shared, *k0);
          const ResidualModel resid = compute_residuals(draw->panel, fit);
          rec.frob_error = detail::scaled_frobenius(fit.m_hat, draw->truth);
          for (const GroupSpec& g : targets) {
            const InferenceResult inf = group_average_ci(draw->panel, fit, resid, g, options.level);
            rec.targets.push_back(detail::inference_outcome(inf, g.average(draw->truth)));
          }
        }
        reports[e].records.push_back(std::move(rec));
      } catch (const Error& err) {
        reports[e].failures.push_back({rep, err.what()});
      }
    }
  }

  for (McReport& r : reports) {
    if (treatment) {
      r.k_used = {k0.value_or(0), k1.value_or(0)};
    } else {
      r.k_used = {k0.value_or(0)};
    }
    summarize(r);
    const double rate = static_cast<double>(r.failures.size()) / static_cast<double>(reps);
    detail::require(rate <= options.max_failure_rate, ErrorCode::McUnstable,
                    std::string(estimator_name(r.estimator)) + ": " +
                        std::to_string(r.failures.size()) + " of " + std::to_string(reps) +
                        " replications failed" +
                        (r.failures.empty() ? std::string() : " (first: " + r.failures.front().message + ")"));
  }
  if (treatment) reports.resize(1);
  return reports;
}

inline McReport run_mc(const DgpSpec& spec, Estimator estimator, int reps,
                       const std::vector<GroupSpec>& targets, const McOptions& options = {}) {
  return run_mc(spec, std::vector<Estimator>{estimator}, reps, targets, options).front();
}

}  // namespace lrinfer
