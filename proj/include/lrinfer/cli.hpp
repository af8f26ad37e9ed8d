#pragma once

// Command-line front end. Kept out of the umbrella header because it pulls
// in CLI11 and nlohmann/json.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lrinfer/error.hpp"
#include "lrinfer/inference.hpp"
#include "lrinfer/io.hpp"
#include "lrinfer/nuclear_solver.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/rank_select.hpp"
#include "lrinfer/simulation.hpp"
#include "lrinfer/treatment.hpp"
#include "lrinfer/two_step.hpp"

namespace lrinfer {

namespace cli {

using Json = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

inline int exit_code_for(const Error& e) {
  return e.category() == ErrorCategory::Numerical ? kNumerical : kData;
}

/// Flags shared by the estimation subcommands.
struct SolverFlags {
  std::string lambda = "auto";
  double lambda_scale = 2.0;
  double tol = 1e-7;
  int max_iters = 500;
  std::string step = "lipschitz";
  double step_size = 0.0;
  bool strict = false;

  void attach(CLI::App* app) {
    app->add_option("--lambda", lambda, "Penalty weight, or 'auto'")->capture_default_str();
    app->add_option("--lambda-scale", lambda_scale, "Multiplier for the automatic penalty")
        ->capture_default_str();
    app->add_option("--tol", tol, "Relative objective tolerance")->capture_default_str();
    app->add_option("--max-iters", max_iters, "Iteration cap for the solver")->capture_default_str();
    app->add_option("--step", step, "Step rule")
        ->check(CLI::IsMember({"lipschitz", "fixed", "backtracking", "auto"}))
        ->capture_default_str();
    app->add_option("--step-size", step_size, "Step size for --step fixed");
    app->add_flag("--strict", strict, "Treat solver non-convergence as a failure");
  }
};

inline std::optional<double> parse_lambda(const std::string& text, const char* flag) {
  if (text == "auto") return std::nullopt;
  const auto v = detail::parse_double(text);
  if (!v) throw CLI::ValidationError(flag, "expected a number or 'auto', got '" + text + "'");
  return v;
}

inline SolverOptions solver_options(const SolverFlags& f, const std::string& lambda_text,
                                    const char* lambda_flag = "--lambda") {
  SolverOptions o;
  o.lambda = parse_lambda(lambda_text, lambda_flag);
  o.lambda_scale = f.lambda_scale;
  o.rel_tol = f.tol;
  o.max_iters = f.max_iters;
  if (f.step == "fixed") {
    o.step_rule = StepRule::Fixed;
  } else if (f.step == "backtracking" || f.step == "auto") {
    o.step_rule = StepRule::Backtracking;
  }
  o.step_size = f.step_size;
  o.fail_on_nonconvergence = f.strict;
  o.validate();
  return o;
}

inline Json solver_json(const SolverOptions& o) {
  Json j;
  j["lambda"] = o.lambda ? Json(*o.lambda) : Json("auto");
  j["lambda_scale"] = o.lambda_scale;
  j["rel_tol"] = o.rel_tol;
  j["max_iters"] = o.max_iters;
  j["step_rule"] = o.step_rule == StepRule::Lipschitz ? "lipschitz"
                   : o.step_rule == StepRule::Fixed   ? "fixed"
                                                      : "backtracking";
  if (o.step_rule == StepRule::Fixed) j["step_size"] = o.step_size;
  j["strict"] = o.fail_on_nonconvergence;
  return j;
}

inline Json solve_json(const LowRankEstimate& est) {
  Json j;
  j["lambda"] = est.lambda;
  j["converged"] = est.converged;
  j["iterations"] = est.iterations;
  j["objective"] = est.objective_trace.empty() ? Json(nullptr) : Json(est.objective_trace.back());
  j["singular_values"] = std::vector<double>(est.singular_values.data(),
                                             est.singular_values.data() + est.singular_values.size());
  return j;
}

inline Json inference_json(const std::string& label, const InferenceResult& r) {
  Json j;
  j["group"] = label;
  j["estimate"] = r.estimate;
  j["std_error"] = r.std_error;
  j["t_stat"] = r.t_stat;
  j["ci_lower"] = r.ci_lower;
  j["ci_upper"] = r.ci_upper;
  j["p_value"] = r.p_value;
  j["level"] = r.level;
  return j;
}

/// Delimited table with optional leading "# key=value" metadata lines.
struct Table {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render(char delim) const {
    std::string out;
    for (const auto& [k, v] : meta) out += "# " + k + "=" + v + "\n";
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c) out += delim;
        out += cells[c];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

inline std::string quote_if_needed(const std::string& s, char delim) {
  if (s.find(delim) == std::string::npos && s.find('"') == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Emitter {
  std::ostream& out;
  std::string path;
  std::string format = "json";
  char delim = ',';

  void emit(const Json& report, const Table& table) const {
    const std::string text = format == "json" ? report.dump(2) + "\n" : table.render(delim);
    if (path.empty() || path == "-") {
      out << text;
    } else {
      write_file_atomic(path, text);
    }
  }
};

inline char parse_delimiter(const std::string& d) {
  if (d == "tab" || d == "\\t" || d == "\t") return '\t';
  if (d.size() != 1) throw CLI::ValidationError("--delimiter", "expected a single character or 'tab'");
  return d.front();
}

struct InputData {
  std::string path;
  std::string digest;
  LoadedPanel loaded;
};

inline InputData load_input(const std::string& path, char delim) {
  std::string bytes = read_file(path);
  std::string digest = "fnv1a64:" + fnv1a_hex(bytes);
  LoadedPanel lp = parse_panel(bytes, LoadOptions{delim});
  return InputData{path, std::move(digest), std::move(lp)};
}

inline const ObservedPanel& require_plain(const InputData& in) {
  if (const auto* p = std::get_if<ObservedPanel>(&in.loaded.panel)) return *p;
  throw Error(ErrorCode::InvalidArgument,
              "input carries a treated column; use the treat subcommand");
}

inline Json header_json(const std::string& command, const InputData* in) {
  Json j;
  j["tool"] = "lrinfer";
  j["command"] = command;
  if (in) {
    Json input;
    input["path"] = in->path;
    input["digest"] = in->digest;
    const Index n = static_cast<Index>(in->loaded.unit_ids.size());
    const Index t = static_cast<Index>(in->loaded.time_ids.size());
    input["units"] = n;
    input["periods"] = t;
    j["input"] = input;
  }
  return j;
}

inline std::vector<std::pair<std::string, std::string>> header_meta(const std::string& command,
                                                                     const InputData* in) {
  std::vector<std::pair<std::string, std::string>> meta{{"command", command}};
  if (in) {
    meta.emplace_back("input", in->path);
    meta.emplace_back("digest", in->digest);
  }
  return meta;
}

/// K from the flag when given, otherwise the threshold estimator on M~.
inline std::pair<int, std::string> choose_k(std::optional<int> k, const LowRankEstimate& est,
                                            Index n, Index t) {
  if (k) return {*k, "flag"};
  return {rank_threshold(est, n, t).chosen_k, "threshold"};
}

inline std::vector<GroupSpec> parse_groups(const std::vector<std::string>& texts, Index n, Index t,
                                           std::vector<std::string>& labels) {
  std::vector<GroupSpec> out;
  labels = texts.empty() ? std::vector<std::string>{"@all"} : texts;
  for (const std::string& g : labels) out.push_back(parse_group(g, n, t));
  return out;
}

inline std::vector<bool> fdr_flags(const std::vector<double>& p, std::optional<double> q) {
  std::vector<bool> flags(p.size(), false);
  if (!q) return flags;
  for (std::size_t j : bh_fdr(p, *q)) flags[j] = true;
  return flags;
}

inline DgpFamily parse_family(const std::string& s) {
  if (s == "factor") return DgpFamily::Factor;
  if (s == "sine") return DgpFamily::Sine;
  if (s == "poly") return DgpFamily::Poly;
  return DgpFamily::Treatment;
}

inline Estimator parse_estimator(const std::string& s) {
  if (s == "tls") return Estimator::Tls;
  if (s == "tls_ss") return Estimator::TlsSampleSplit;
  return Estimator::PlainNuclear;
}

/// "uniform:P" or "heterogeneous:LO,HI" (also "hetero:LO,HI").
inline MissingSpec parse_missing(const std::string& s) {
  const std::size_t colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : s.substr(colon + 1);
  if (kind == "uniform") {
    const auto p = detail::parse_double(args);
    if (!p) throw CLI::ValidationError("--missing", "uniform needs a probability, e.g. uniform:0.5");
    return MissingSpec::uniform(*p);
  }
  if (kind == "heterogeneous" || kind == "hetero") {
    if (args.empty()) return MissingSpec::heterogeneous(0.3, 0.7);
    const auto parts = detail::split_fields(args, ',');
    std::optional<double> lo;
    std::optional<double> hi;
    if (parts.size() == 2) {
      lo = detail::parse_double(parts[0]);
      hi = detail::parse_double(parts[1]);
    }
    if (!lo || !hi) throw CLI::ValidationError("--missing", "expected heterogeneous:LO,HI");
    return MissingSpec::heterogeneous(*lo, *hi);
  }
  throw CLI::ValidationError("--missing", "expected uniform:P or heterogeneous:LO,HI");
}

inline Json dgp_json(const DgpSpec& s) {
  Json j;
  j["family"] = std::string(family_name(s.family));
  j["n"] = s.n;
  j["t"] = s.t;
  j["noise_sd"] = s.noise_sd;
  if (s.missing.kind == MissingSpec::Kind::Uniform) {
    j["missing"] = {{"kind", "uniform"}, {"p", s.missing.p}};
  } else {
    j["missing"] = {{"kind", "heterogeneous"}, {"lo", s.missing.lo}, {"hi", s.missing.hi}};
  }
  j["series_truncation"] = s.series_truncation;
  if (s.family == DgpFamily::Treatment) j["decay_a"] = s.decay_a;
  j["seed"] = s.seed;
  return j;
}

inline Json mc_report_json(const McReport& r, const std::vector<std::string>& target_labels) {
  Json j;
  j["estimator"] = std::string(estimator_name(r.estimator));
  j["reps"] = r.reps;
  j["level"] = r.level;
  j["k_used"] = r.k_used;
  j["completed_reps"] = r.records.size();
  j["failed_reps"] = r.failures.size();
  j["mean_frob_error"] = r.mean_frob_error;
  Json summaries = Json::array();
  for (std::size_t g = 0; g < r.summaries.size(); ++g) {
    const TargetSummary& s = r.summaries[g];
    Json e;
    e["target"] = target_labels[g];
    e["mean_error"] = s.mean_error;
    e["mean_sq_error"] = s.mean_sq_error;
    if (s.n_inference > 0) {
      e["mean_z"] = s.mean_z;
      e["sd_z"] = s.sd_z;
      e["ks_stat"] = s.ks_stat;
      e["coverage"] = s.coverage;
    }
    summaries.push_back(e);
  }
  j["summaries"] = summaries;
  Json failures = Json::array();
  for (const RepFailure& f : r.failures) failures.push_back({{"rep", f.rep}, {"message", f.message}});
  j["failures"] = failures;
  Json reps = Json::array();
  for (const RepRecord& rec : r.records) {
    Json row;
    row["rep"] = rec.rep;
    row["seed"] = rec.seed;
    row["frob_error"] = rec.frob_error;
    Json targets = Json::array();
    for (const TargetOutcome& o : rec.targets) {
      Json t;
      t["estimate"] = o.estimate;
      t["truth"] = o.truth;
      t["sq_error"] = o.sq_error();
      if (o.has_inference) {
        t["std_error"] = o.std_error;
        t["z"] = o.z;
        t["covered"] = o.covered;
      }
      targets.push_back(t);
    }
    row["targets"] = targets;
    reps.push_back(row);
  }
  j["replications"] = reps;
  return j;
}

}  // namespace cli

/// Runs one CLI invocation. `args` excludes the program name. Returns the
/// process exit code: 0 success, 1 usage error, 2 data error, 3 numerical
/// failure.
inline int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli;

  CLI::App app{"Low-rank panel completion with two-step least-squares inference", "lrinfer"};
  app.require_subcommand(1);

  std::string input;
  std::string output;
  std::string format = "json";
  std::string delimiter = ",";
  std::uint64_t seed = 0;
  std::optional<int> k;
  SolverFlags solver;

  auto common = [&](CLI::App* sub, bool with_input) {
    if (with_input) {
      sub->add_option("input", input, "Long-format panel file (unit,time,value[,treated])")->required();
      sub->add_option("--delimiter", delimiter, "Field delimiter of the input")->capture_default_str();
    }
    sub->add_option("--output,-o", output, "Report path (stdout when omitted)");
    sub->add_option("--format", format, "Report format")
        ->check(CLI::IsMember({"json", "csv"}))
        ->capture_default_str();
    sub->add_option("--seed", seed, "Seed for randomized steps")->capture_default_str();
    solver.attach(sub);
  };
  auto positive_k = CLI::Range(1, 1 << 20);

  // fit
  CLI::App* fit = app.add_subcommand("fit", "Fit M^ and write the completed matrix");
  common(fit, true);
  fit->add_option("--k", k, "Number of factors (threshold estimator when omitted)")->check(positive_k);
  std::string completed;
  fit->add_option("--completed", completed,
                  "Completed-matrix path (default: <output>.completed.csv)");
  bool split = false;
  fit->add_flag("--split", split, "Use the sample-splitting variant");

  // infer
  CLI::App* infer = app.add_subcommand("infer", "Confidence intervals for group averages");
  common(infer, true);
  infer->add_option("--k", k, "Number of factors (threshold estimator when omitted)")->check(positive_k);
  std::vector<std::string> groups;
  double level = 0.95;
  std::optional<double> fdr;
  bool one_sided = false;
  auto inference_flags = [&](CLI::App* sub) {
    sub->add_option("--group,-g", groups, "Group spec, e.g. 'units=1..10,25 periods=3..8' or @all")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sub->add_option("--level", level, "Confidence level")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sub->add_option("--fdr", fdr, "Benjamini-Hochberg level q across groups")->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--one-sided", one_sided, "Test H1: target > 0");
  };
  inference_flags(infer);

  // treat
  CLI::App* treat = app.add_subcommand("treat", "Average treatment effects over groups");
  common(treat, true);
  treat->add_option("--k", k, "Factors for both arms")->check(positive_k);
  std::optional<int> k0;
  std::optional<int> k1;
  std::string lambda0;
  std::string lambda1;
  treat->add_option("--k0", k0, "Factors for the control arm")->check(positive_k);
  treat->add_option("--k1", k1, "Factors for the treated arm")->check(positive_k);
  treat->add_option("--lambda0", lambda0, "Penalty for the control arm (number or 'auto')");
  treat->add_option("--lambda1", lambda1, "Penalty for the treated arm (number or 'auto')");
  inference_flags(treat);

  // select-rank
  CLI::App* select = app.add_subcommand("select-rank", "Choose the number of factors");
  common(select, true);
  std::string method = "threshold";
  std::vector<int> candidates = default_cv_candidates();
  int n_splits = 5;
  select->add_option("--method", method, "Selection rule")
      ->check(CLI::IsMember({"threshold", "cv"}))
      ->capture_default_str();
  select->add_option("--candidates", candidates, "Candidate ranks for cv")->delimiter(',');
  select->add_option("--splits", n_splits, "Number of cv splits")->check(CLI::PositiveNumber)->capture_default_str();

  // simulate
  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo experiment on a synthetic design");
  common(simulate, false);
  std::string dgp = "factor";
  Index sim_n = 100;
  Index sim_t = 100;
  int reps = 100;
  std::vector<std::string> estimators{"tls"};
  double noise_sd = 1.0;
  std::string missing = "heterogeneous:0.3,0.7";
  int truncation = 100;
  double decay = 2.0;
  std::vector<std::string> targets;
  std::vector<int> sim_candidates = McOptions{}.cv_candidates;
  simulate->add_option("--dgp", dgp, "Design family")
      ->check(CLI::IsMember({"factor", "sine", "poly", "treatment"}))
      ->capture_default_str();
  simulate->add_option("--n", sim_n, "Units")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--t", sim_t, "Periods")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber)->capture_default_str();
  simulate->add_option("--estimator", estimators, "tls, tls_ss or plain_nuclear (comma list)")
      ->delimiter(',')
      ->check(CLI::IsMember({"tls", "tls_ss", "plain_nuclear"}));
  simulate->add_option("--noise-sd", noise_sd, "Noise standard deviation")->capture_default_str();
  simulate->add_option("--missing", missing, "uniform:P or heterogeneous:LO,HI")->capture_default_str();
  simulate->add_option("--truncation", truncation, "Series truncation R")->capture_default_str();
  simulate->add_option("--decay", decay, "Decay exponent a (treatment design)")->capture_default_str();
  simulate->add_option("--k", k, "Fixed number of factors")->check(positive_k);
  simulate->add_option("--candidates", sim_candidates, "Candidate ranks for cv")->delimiter(',');
  simulate->add_option("--target", targets, "Target group spec (default: units=1 periods=1)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  simulate->add_option("--level", level, "Confidence level")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kUsage;
  }

  try {
    const char delim = parse_delimiter(delimiter);
    const Emitter emitter{out, output, format, ','};

    if (fit->parsed()) {
      const SolverOptions opts = solver_options(solver, solver.lambda);
      const InputData in = load_input(input, delim);
      const ObservedPanel& panel = require_plain(in);
      const LowRankEstimate est = solve_nuclear_norm(panel, estimate_propensity(panel), opts);
      const auto [kk, k_source] = choose_k(k, est, panel.n_units(), panel.n_periods());
      const FactorFit ff = split ? tls_fit_sample_split(panel, kk, opts, seed) : tls_refit(panel, est, kk);

      std::string completed_path = completed;
      if (completed_path.empty() && !output.empty() && output != "-") completed_path = output + ".completed.csv";
      if (!completed_path.empty()) {
        write_file_atomic(completed_path, format_completed(ff.m_hat, panel.mask(), in.loaded.unit_ids,
                                                           in.loaded.time_ids, delim));
      }
      const ResidualModel resid = compute_residuals(panel, ff);
      const double rmse = std::sqrt(resid.residuals.squaredNorm() / static_cast<double>(panel.n_observed()));

      Json report = header_json("fit", &in);
      Json config;
      config["k"] = k ? Json(*k) : Json("threshold");
      config["sample_split"] = split;
      config["seed"] = seed;
      config["solver"] = solver_json(opts);
      report["config"] = config;
      Json results;
      results["k"] = kk;
      results["k_source"] = k_source;
      results["observed_cells"] = panel.n_observed();
      results["observed_rmse"] = rmse;
      results["completed_path"] = completed_path.empty() ? Json(nullptr) : Json(completed_path);
      results["penalized"] = solve_json(est);
      report["results"] = results;

      Table table;
      table.meta = header_meta("fit", &in);
      table.header = {"quantity", "value"};
      table.rows = {{"k", std::to_string(kk)},
                    {"k_source", k_source},
                    {"lambda", format_double(est.lambda)},
                    {"converged", est.converged ? "1" : "0"},
                    {"iterations", std::to_string(est.iterations)},
                    {"observed_rmse", format_double(rmse)},
                    {"completed_path", quote_if_needed(completed_path, ',')}};
      emitter.emit(report, table);
      return kOk;
    }

    if (infer->parsed()) {
      const SolverOptions opts = solver_options(solver, solver.lambda);
      const InputData in = load_input(input, delim);
      const ObservedPanel& panel = require_plain(in);
      std::vector<std::string> labels;
      const auto specs = parse_groups(groups, panel.n_units(), panel.n_periods(), labels);
      const LowRankEstimate est = solve_nuclear_norm(panel, estimate_propensity(panel), opts);
      const auto [kk, k_source] = choose_k(k, est, panel.n_units(), panel.n_periods());
      const FactorFit ff = tls_refit(panel, est, kk);
      const ResidualModel resid = compute_residuals(panel, ff);
      const Sidedness sided = one_sided ? Sidedness::Greater : Sidedness::TwoSided;
      std::vector<InferenceResult> results;
      std::vector<double> p;
      for (const GroupSpec& g : specs) {
        results.push_back(group_average_ci(panel, ff, resid, g, level, sided));
        p.push_back(results.back().p_value);
      }
      const std::vector<bool> rejected = fdr_flags(p, fdr);

      Json report = header_json("infer", &in);
      Json config;
      config["k"] = k ? Json(*k) : Json("threshold");
      config["level"] = level;
      config["sided"] = one_sided ? "greater" : "two-sided";
      config["fdr"] = fdr ? Json(*fdr) : Json(nullptr);
      config["solver"] = solver_json(opts);
      report["config"] = config;
      Json rows = Json::array();
      Table table;
      table.meta = header_meta("infer", &in);
      table.meta.emplace_back("k", std::to_string(kk));
      table.header = {"group", "estimate", "std_error", "t_stat", "ci_lower", "ci_upper", "p_value", "rejected"};
      for (std::size_t g = 0; g < specs.size(); ++g) {
        Json row = inference_json(labels[g], results[g]);
        if (fdr) row["fdr_rejected"] = static_cast<bool>(rejected[g]);
        rows.push_back(row);
        const InferenceResult& r = results[g];
        table.rows.push_back({quote_if_needed(labels[g], ','), format_double(r.estimate), format_double(r.std_error),
                              format_double(r.t_stat), format_double(r.ci_lower), format_double(r.ci_upper),
                              format_double(r.p_value), fdr ? (rejected[g] ? "1" : "0") : ""});
      }
      report["results"] = {{"k", kk}, {"k_source", k_source}, {"lambda", est.lambda}, {"groups", rows}};
      emitter.emit(report, table);
      return kOk;
    }

    if (treat->parsed()) {
      const SolverOptions base = solver_options(solver, solver.lambda);
      SolverOptions opts0 = base;
      SolverOptions opts1 = base;
      if (!lambda0.empty()) opts0.lambda = parse_lambda(lambda0, "--lambda0");
      if (!lambda1.empty()) opts1.lambda = parse_lambda(lambda1, "--lambda1");
      const InputData in = load_input(input, delim);
      const auto* tp = std::get_if<TreatmentPanel>(&in.loaded.panel);
      detail::require(tp != nullptr, ErrorCode::InvalidArgument, "input lacks a treated column");
      std::vector<std::string> labels;
      const auto specs = parse_groups(groups, tp->n_units(), tp->n_periods(), labels);

      const ArmPanels arms = split_arms(*tp);
      auto arm_k = [&](std::optional<int> specific, const ObservedPanel& arm, const SolverOptions& o,
                       const char* name) -> std::pair<int, std::string> {
        if (specific) return {*specific, "flag"};
        if (k) return {*k, "flag"};
        return detail::with_arm_label(name, [&] {
          const LowRankEstimate est = solve_nuclear_norm(arm, estimate_propensity(arm), o);
          return choose_k(std::nullopt, est, arm.n_units(), arm.n_periods());
        });
      };
      const auto [kc, kc_source] = arm_k(k0, arms.control, opts0, "control");
      const auto [kt, kt_source] = arm_k(k1, arms.treated, opts1, "treated");
      const TreatmentFit tf = fit_treatment(*tp, {kc, opts0}, {kt, opts1});
      const Sidedness sided = one_sided ? Sidedness::Greater : Sidedness::TwoSided;
      std::vector<AteResult> results;
      std::vector<double> p;
      for (const GroupSpec& g : specs) {
        results.push_back(ate_for_group(tf, g, level, sided));
        p.push_back(results.back().inference.p_value);
      }
      const std::vector<bool> rejected = fdr_flags(p, fdr);

      Json report = header_json("treat", &in);
      Json config;
      config["k_control"] = k0 ? Json(*k0) : k ? Json(*k) : Json("threshold");
      config["k_treated"] = k1 ? Json(*k1) : k ? Json(*k) : Json("threshold");
      config["level"] = level;
      config["sided"] = one_sided ? "greater" : "two-sided";
      config["fdr"] = fdr ? Json(*fdr) : Json(nullptr);
      config["solver_control"] = solver_json(opts0);
      config["solver_treated"] = solver_json(opts1);
      report["config"] = config;
      Json rows = Json::array();
      Table table;
      table.meta = header_meta("treat", &in);
      table.meta.emplace_back("k_control", std::to_string(kc));
      table.meta.emplace_back("k_treated", std::to_string(kt));
      table.header = {"group",   "estimate", "std_error",        "t_stat",           "ci_lower",
                      "ci_upper", "p_value", "variance_control", "variance_treated", "rejected"};
      for (std::size_t g = 0; g < specs.size(); ++g) {
        const AteResult& a = results[g];
        Json row = inference_json(labels[g], a.inference);
        row["variance_control"] = a.variance_control;
        row["variance_treated"] = a.variance_treated;
        if (fdr) row["fdr_rejected"] = static_cast<bool>(rejected[g]);
        rows.push_back(row);
        const InferenceResult& r = a.inference;
        table.rows.push_back({quote_if_needed(labels[g], ','), format_double(r.estimate), format_double(r.std_error),
                              format_double(r.t_stat), format_double(r.ci_lower), format_double(r.ci_upper),
                              format_double(r.p_value), format_double(a.variance_control),
                              format_double(a.variance_treated), fdr ? (rejected[g] ? "1" : "0") : ""});
      }
      report["results"] = {{"k_control", kc},
                           {"k_control_source", kc_source},
                           {"k_treated", kt},
                           {"k_treated_source", kt_source},
                           {"groups", rows}};
      emitter.emit(report, table);
      return kOk;
    }

    if (select->parsed()) {
      const SolverOptions opts = solver_options(solver, solver.lambda);
      const InputData in = load_input(input, delim);
      const ObservedPanel& panel = require_plain(in);
      Json report = header_json("select-rank", &in);
      Json config;
      config["method"] = method;
      config["seed"] = seed;
      if (method == "cv") {
        config["candidates"] = candidates;
        config["splits"] = n_splits;
      }
      config["solver"] = solver_json(opts);
      report["config"] = config;

      Table table;
      table.meta = header_meta("select-rank", &in);
      Json results;
      if (method == "threshold") {
        const LowRankEstimate est = solve_nuclear_norm(panel, estimate_propensity(panel), opts);
        const RankSelection sel = rank_threshold(est, panel.n_units(), panel.n_periods());
        results["chosen_k"] = sel.chosen_k;
        results["threshold"] = sel.threshold;
        results["raw_count"] = sel.raw_count;
        results["singular_values"] =
            std::vector<double>(sel.singular_values.data(), sel.singular_values.data() + sel.singular_values.size());
        table.meta.emplace_back("chosen_k", std::to_string(sel.chosen_k));
        table.meta.emplace_back("threshold", format_double(sel.threshold));
        table.header = {"index", "singular_value", "above_threshold"};
        for (Index r = 0; r < sel.singular_values.size(); ++r) {
          table.rows.push_back({std::to_string(r + 1), format_double(sel.singular_values(r)),
                                sel.singular_values(r) >= sel.threshold ? "1" : "0"});
        }
      } else {
        const RankSelection sel = rank_cv(panel, candidates, opts, seed, n_splits);
        results["chosen_k"] = sel.chosen_k;
        Json scores = Json::array();
        for (std::size_t c = 0; c < sel.candidates.size(); ++c) {
          scores.push_back({{"k", sel.candidates[c]},
                            {"score", std::isfinite(sel.scores[c]) ? Json(sel.scores[c]) : Json(nullptr)}});
        }
        results["scores"] = scores;
        table.meta.emplace_back("chosen_k", std::to_string(sel.chosen_k));
        table.header = {"k", "score"};
        for (std::size_t c = 0; c < sel.candidates.size(); ++c) {
          table.rows.push_back({std::to_string(sel.candidates[c]), format_double(sel.scores[c])});
        }
      }
      report["results"] = results;
      emitter.emit(report, table);
      return kOk;
    }

    // simulate
    DgpSpec spec;
    spec.family = parse_family(dgp);
    spec.n = sim_n;
    spec.t = sim_t;
    spec.noise_sd = noise_sd;
    spec.missing = parse_missing(missing);
    spec.series_truncation = truncation;
    spec.decay_a = decay;
    spec.seed = seed;
    spec.validate();
    McOptions mc;
    mc.k = k;
    mc.cv_candidates = sim_candidates;
    mc.solver = solver_options(solver, solver.lambda);
    mc.level = level;
    std::vector<std::string> target_labels = targets.empty() ? std::vector<std::string>{"units=1 periods=1"} : targets;
    std::vector<GroupSpec> target_specs;
    for (const std::string& t : target_labels) target_specs.push_back(parse_group(t, spec.n, spec.t));
    std::vector<Estimator> which;
    for (const std::string& e : estimators) {
      const Estimator est = parse_estimator(e);
      if (std::find(which.begin(), which.end(), est) == which.end()) which.push_back(est);
    }
    const std::vector<McReport> reports = run_mc(spec, which, reps, target_specs, mc);

    Json report = header_json("simulate", nullptr);
    Json config;
    config["dgp"] = dgp_json(spec);
    config["reps"] = reps;
    config["estimators"] = estimators;
    config["k"] = k ? Json(*k) : Json(spec.family == DgpFamily::Factor ? "true rank" : "cv");
    if (!k && spec.family != DgpFamily::Factor) config["cv_candidates"] = sim_candidates;
    config["targets"] = target_labels;
    config["level"] = level;
    config["solver"] = solver_json(mc.solver);
    report["config"] = config;
    Json results = Json::array();
    Table table;
    table.meta = header_meta("simulate", nullptr);
    table.meta.emplace_back("dgp", dgp);
    table.meta.emplace_back("seed", std::to_string(seed));
    table.header = {"estimator", "rep", "seed", "frob_error", "target", "estimate", "truth", "std_error", "z", "covered"};
    for (const McReport& r : reports) {
      results.push_back(mc_report_json(r, target_labels));
      table.meta.emplace_back(std::string(estimator_name(r.estimator)) + ".mean_frob_error",
                              format_double(r.mean_frob_error));
      for (const RepRecord& rec : r.records) {
        for (std::size_t g = 0; g < rec.targets.size(); ++g) {
          const TargetOutcome& o = rec.targets[g];
          table.rows.push_back({std::string(estimator_name(r.estimator)), std::to_string(rec.rep),
                                std::to_string(rec.seed), format_double(rec.frob_error),
                                quote_if_needed(target_labels[g], ','), format_double(o.estimate),
                                format_double(o.truth), o.has_inference ? format_double(o.std_error) : "",
                                o.has_inference ? format_double(o.z) : "",
                                o.has_inference ? (o.covered ? "1" : "0") : ""});
        }
      }
    }
    report["results"] = results;
    emitter.emit(report, table);
    return kOk;
  } catch (const CLI::Error& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace lrinfer
