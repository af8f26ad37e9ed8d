// Acceptance suite. Prints one PASS/FAIL line per criterion and exits with the
// number of failed criteria. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lrinfer/cli.hpp"
#include "lrinfer/lrinfer.hpp"
#include "oracles.hpp"

using namespace lrinfer;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

void log(const std::string& line) {
  std::printf("    %s\n", line.c_str());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Estimation accuracy on the three designs at the three panel shapes.

struct CellResult {
  double tls = 0.0;
  double plain = 0.0;
};

const char* family_label(DgpFamily f) { return std::string_view(family_name(f)).data(); }

std::map<std::tuple<int, Index, Index>, CellResult>& accuracy_cache() {
  static std::map<std::tuple<int, Index, Index>, CellResult> cache;
  return cache;
}

CellResult accuracy_cell(DgpFamily family, Index n, Index t) {
  auto& cache = accuracy_cache();
  const auto key = std::make_tuple(static_cast<int>(family), n, t);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  DgpSpec spec;
  spec.family = family;
  spec.n = n;
  spec.t = t;
  spec.seed = 20240101;
  const auto reports =
      run_mc(spec, {Estimator::Tls, Estimator::PlainNuclear}, 100, {GroupSpec::single(0, 0)}, McOptions{});
  const CellResult r{reports[0].mean_frob_error, reports[1].mean_frob_error};
  log(fmt("%-6s N=%-3ld T=%-3ld  TLS %.4f  plain %.4f  (K=%d)", family_label(family), static_cast<long>(n),
          static_cast<long>(t), r.tls, r.plain, reports[0].k_used.front()));
  cache.emplace(key, r);
  return r;
}

Outcome criterion_1() {
  const CellResult f = accuracy_cell(DgpFamily::Factor, 100, 100);
  const CellResult s = accuracy_cell(DgpFamily::Sine, 100, 100);
  const CellResult p = accuracy_cell(DgpFamily::Poly, 100, 100);
  const double ds = std::abs(s.tls / 0.2129 - 1.0);
  const double dp = std::abs(p.tls / 0.2057 - 1.0);
  const bool ok = f.tls >= 0.27 && f.tls <= 0.34 && ds <= 0.15 && dp <= 0.15;
  return {ok, fmt("factor %.4f in [0.27,0.34]; sine %.4f (%.1f%% off 0.2129); poly %.4f (%.1f%% off 0.2057)",
                  f.tls, s.tls, 100 * ds, p.tls, 100 * dp)};
}

Outcome criterion_2() {
  bool ok = true;
  double worst = 0.0;
  for (auto [n, t] : {std::pair<Index, Index>{100, 100}, {200, 100}, {100, 200}}) {
    for (DgpFamily fam : {DgpFamily::Factor, DgpFamily::Sine, DgpFamily::Poly}) {
      const CellResult c = accuracy_cell(fam, n, t);
      ok = ok && c.tls < c.plain;
      worst = std::max(worst, c.tls / c.plain);
    }
  }
  return {ok, fmt("largest TLS/plain error ratio over 9 cells: %.3f", worst)};
}

// ---------------------------------------------------------------------------
// Full-sample versus sample-split two-step estimates at small T.

Outcome criterion_3() {
  bool ok = true;
  std::string detail;
  for (Index t : {20, 40, 60}) {
    DgpSpec spec;
    spec.n = 100;
    spec.t = t;
    spec.missing = MissingSpec::uniform(0.5);
    spec.seed = 3030;
    McOptions mc;
    mc.max_failure_rate = 1.0;
    const auto reports =
        run_mc(spec, {Estimator::Tls, Estimator::TlsSampleSplit}, 1000, {GroupSpec::single(0, 0)}, mc);
    double mse_full = 0.0;
    double mse_split = 0.0;
    std::size_t both = 0;
    std::map<int, double> full_by_rep;
    for (const RepRecord& r : reports[0].records) full_by_rep[r.rep] = r.frob_error * r.frob_error;
    for (const RepRecord& r : reports[1].records) {
      if (auto it = full_by_rep.find(r.rep); it != full_by_rep.end()) {
        mse_full += it->second;
        mse_split += r.frob_error * r.frob_error;
        ++both;
      }
    }
    mse_full /= static_cast<double>(both);
    mse_split /= static_cast<double>(both);
    const double ratio = mse_full / mse_split;
    log(fmt("T=%-2ld TLS %.5f  SS %.5f  ratio %.3f  (SS failed on %zu of 1000, TLS on %zu)", static_cast<long>(t),
            mse_full, mse_split, ratio, reports[1].failures.size(), reports[0].failures.size()));
    ok = ok && mse_full < mse_split;
    if (t == 20) {
      ok = ok && ratio < 0.5;
      detail = fmt("T=20 ratio %.3f (needs < 0.5)", ratio);
    }
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// Normality and coverage of the inference procedure.

bool normal_enough(const TargetSummary& s) {
  return std::abs(s.mean_z) < 0.1 && std::abs(s.sd_z - 1.0) < 0.1 && s.ks_stat < 0.05;
}

std::string z_summary(const TargetSummary& s) {
  return fmt("mean %+.3f sd %.3f KS %.4f cover %.3f (n=%d)", s.mean_z, s.sd_z, s.ks_stat, s.coverage,
             s.n_inference);
}

std::map<int, McReport>& inference_cache() {
  static std::map<int, McReport> cache;
  return cache;
}

/// Targets: the (1,1) entry, the first unit's row average, the first period's column average.
const McReport& inference_run(DgpFamily family) {
  auto& cache = inference_cache();
  if (auto it = cache.find(static_cast<int>(family)); it != cache.end()) return it->second;
  DgpSpec spec;
  spec.family = family;
  spec.n = 200;
  spec.t = 200;
  spec.seed = 4040;
  const McReport r = run_mc(spec, Estimator::Tls, 1000,
                            {GroupSpec::single(0, 0), GroupSpec::row(0, 200), GroupSpec::column(0, 200)});
  log(fmt("%s K=%d failures %zu", family_label(family), r.k_used.front(), r.failures.size()));
  const char* names[] = {"entry", "row", "column"};
  for (std::size_t g = 0; g < 3; ++g) log(fmt("  %-6s %s", names[g], z_summary(r.summaries[g]).c_str()));
  return cache.emplace(static_cast<int>(family), r).first->second;
}

Outcome criterion_4() {
  const TargetSummary& s = inference_run(DgpFamily::Sine).summaries[0];
  const TargetSummary& p = inference_run(DgpFamily::Poly).summaries[0];
  return {normal_enough(s) && normal_enough(p),
          "sine " + z_summary(s) + "; poly " + z_summary(p)};
}

Outcome criterion_5() {
  const McReport& r = inference_run(DgpFamily::Sine);
  bool ok = true;
  std::string detail = "sine coverage";
  const char* names[] = {"entry", "row", "column"};
  for (std::size_t g = 0; g < 3; ++g) {
    ok = ok && std::abs(r.summaries[g].coverage - 0.95) <= 0.02;
    detail += fmt(" %s %.3f", names[g], r.summaries[g].coverage);
  }
  return {ok, detail};
}

Outcome criterion_6() {
  DgpSpec spec;
  spec.family = DgpFamily::Treatment;
  spec.n = 150;
  spec.t = 150;
  spec.decay_a = 2.0;
  spec.seed = 6060;
  const McReport r = run_mc(spec, Estimator::Tls, 1000,
                            {GroupSpec::single(0, 0), GroupSpec::column(0, 150), GroupSpec::row(0, 150)});
  log(fmt("treatment K=(%d,%d) failures %zu", r.k_used[0], r.k_used[1], r.failures.size()));
  bool ok = true;
  std::string detail;
  const char* names[] = {"G1 entry", "G2 column", "G3 row"};
  for (std::size_t g = 0; g < 3; ++g) {
    const TargetSummary& s = r.summaries[g];
    log(fmt("  %-9s %s", names[g], z_summary(s).c_str()));
    ok = ok && normal_enough(s) && std::abs(s.coverage - 0.95) <= 0.03;
    detail += fmt("%s%s cover %.3f", g ? "; " : "", names[g], s.coverage);
  }
  return {ok, "N=T=150, " + detail};
}

// ---------------------------------------------------------------------------
// Deterministic properties.

// The default penalty scales with a robust spread of the additive-fit
// residuals. Without noise that spread is signal, and for K = 5 with N or
// T = 20 it exceeds the K-th singular value, so the default constant is also
// reported but the check uses a constant fifty times smaller.
Outcome criterion_7() {
  SolverOptions light;
  light.lambda_scale = 0.04;
  std::mt19937_64 rng(7);
  double worst = 0.0;
  int default_ok = 0;
  for (int k : {1, 2, 5}) {
    for (Index n : {20, 100}) {
      for (Index t : {20, 100}) {
        const Matrix m = oracle::random_normal(n, k, rng) * oracle::random_normal(t, k, rng).transpose();
        const ObservedPanel panel = ObservedPanel::complete(m);
        const FactorFit fit = tls_fit(panel, k, light);
        worst = std::max(worst, (fit.m_hat - m).norm() / m.norm());
        try {
          if ((tls_fit(panel, k).m_hat - m).norm() <= 1e-6 * m.norm()) ++default_ok;
        } catch (const Error& e) {
          log(fmt("default penalty, K=%d N=%ld T=%ld: %s", k, static_cast<long>(n), static_cast<long>(t), e.what()));
        }
      }
    }
  }
  return {worst <= 1e-6, fmt("largest relative Frobenius error %.2e over 12 panels (default penalty exact on %d)",
                             worst, default_ok)};
}

Outcome criterion_8() {
  std::mt19937_64 rng(8);
  double worst_var = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 5 + trial % 7;
    const Index t = 4 + trial % 5;
    const Index k = 1 + trial % 3;
    Matrix w = oracle::random_mask(n, t, 0.7, rng);
    w.topRows(k + 1).setOnes();
    w.leftCols(k + 1).setOnes();
    const ObservedPanel p(oracle::random_normal(n, t, rng), w);
    SolverOptions small;
    small.lambda = 0.05;
    const FactorFit fit = tls_fit(p, static_cast<int>(k), small);
    const ResidualModel resid = compute_residuals(p, fit);
    std::vector<Index> units;
    std::vector<Index> periods;
    for (Index i = 0; i < n; ++i) {
      if (rng() % 2 == 0 || units.empty()) units.push_back(i);
    }
    for (Index s = 0; s < t; ++s) {
      if (rng() % 2 == 0 || periods.empty()) periods.push_back(s);
    }
    const GroupSpec g(units, periods);
    const double ours = group_variance(p, fit, resid, g);
    const double expected =
        oracle::group_variance(w, fit.loadings, fit.factors, resid.sigma2_hat, g.units(), g.periods());
    worst_var = std::max(worst_var, std::abs(ours - expected) / std::max(1.0, std::abs(expected)));
  }

  double worst_obj = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix w = oracle::random_mask(5, 5, 0.7, rng);
    const ObservedPanel p(oracle::random_normal(5, 5, rng), w);
    const PropensityEstimate prop = estimate_propensity(p);
    const double lambda = 0.2 + 0.1 * (trial % 10);
    SolverOptions opts;
    opts.lambda = lambda;
    opts.lambda_scale = 1.0;
    opts.rel_tol = 1e-13;
    opts.max_iters = 100000;
    const LowRankEstimate est = solve_nuclear_norm(p, prop, opts);
    const double ours = nuclear_objective(p, prop, est.m_tilde, lambda);
    const double reference = oracle::subgradient_minimum(p.values(), w, prop.p_hat, lambda, 80, 5000);
    worst_obj = std::max(worst_obj, std::abs(ours - reference));
  }
  return {worst_var <= 1e-10 && worst_obj <= 1e-6,
          fmt("group variance max rel. diff %.2e (50 panels); objective max diff %.2e (20 problems)", worst_var,
              worst_obj)};
}

Outcome criterion_9() {
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3.0, 1.0, 0.5;
  Matrix want = Matrix::Zero(3, 3);
  want(0, 0) = 2.0;
  track((soft_threshold_svd(d, 1.0) - want).cwiseAbs().maxCoeff(), 0.0);

  const bool bh_ok = bh_fdr({0.001, 0.02, 0.04, 0.3}, 0.05) == std::vector<std::size_t>{0, 1};

  Matrix w(3, 4);
  w << 1, 0, 1, 0, 1, 1, 1, 1, 1, 0, 0, 0;
  const Vector p_hat = estimate_propensity(ObservedPanel(Matrix::Zero(3, 4), w)).p_hat;
  track(p_hat(0), 0.5);
  track(p_hat(1), 1.0);
  track(p_hat(2), 0.25);
  Matrix w5 = Matrix::Ones(2, 5);
  w5.row(0) << 1, 0, 0, 0, 0;
  track(estimate_propensity(ObservedPanel(Matrix::Zero(2, 5), w5)).p_hat(0), 0.2);

  Matrix beta(2, 1);
  beta << 1.0, 2.0;
  Matrix y(2, 1);
  y << 3.0, 6.0;
  track(estimate_factors(ObservedPanel::complete(y), beta)(0, 0), 3.0);
  Matrix y2(2, 2);
  y2 << 7.0, 1.0, 5.0, 4.0;
  Matrix w2(2, 2);
  w2 << 0, 1, 1, 1;
  const Matrix f2 = estimate_factors(ObservedPanel(y2, w2), beta);
  track(f2(0, 0), 2.5);
  track(f2(1, 0), 1.8);
  Matrix ones(2, 1);
  ones << 1.0, 1.0;
  Matrix row(1, 2);
  row << 4.0, 6.0;
  track(estimate_loadings(ObservedPanel::complete(row), ones)(0, 0), 5.0);

  return {bh_ok && worst <= 1e-12, fmt("largest deviation %.2e; BH step-up %s", worst, bh_ok ? "exact" : "wrong")};
}

Outcome criterion_10() {
  int hits = 0;
  for (int rep = 0; rep < 100; ++rep) {
    DgpSpec spec;
    spec.n = 200;
    spec.t = 200;
    spec.seed = derive_seed(1010, static_cast<std::uint64_t>(rep));
    const SimDraw draw = generate_panel(spec);
    const LowRankEstimate est = solve_nuclear_norm(draw.panel, estimate_propensity(draw.panel));
    if (rank_threshold(est, 200, 200).chosen_k == 2) ++hits;
  }

  bool cv_ok = true;
  const std::vector<int> candidates{2, 4, 6, 8, 10};
  for (int rep = 0; rep < 3; ++rep) {
    DgpSpec spec;
    spec.seed = derive_seed(1011, static_cast<std::uint64_t>(rep));
    const SimDraw draw = generate_panel(spec);
    const std::uint64_t seed = 500 + static_cast<std::uint64_t>(rep);
    const RankSelection a = rank_cv(draw.panel, candidates, {}, seed);
    const RankSelection b = rank_cv(draw.panel, candidates, {}, seed);
    cv_ok = cv_ok && a.scores == b.scores && a.chosen_k == b.chosen_k;
    std::vector<double> manual(candidates.size(), 0.0);
    for (const CvSplit& s : cv_splits(draw.panel.mask(), 5, seed)) {
      const ObservedPanel train(draw.panel.values(), s.train);
      const LowRankEstimate est = solve_nuclear_norm(train, estimate_propensity(train));
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        try {
          const FactorFit fit = tls_refit(train, est, candidates[c]);
          const Matrix diff = (fit.m_hat - draw.panel.values()).cwiseProduct(s.holdout);
          manual[c] += diff.squaredNorm() / s.holdout.sum();
        } catch (const Error&) {
          manual[c] = std::numeric_limits<double>::infinity();
        }
      }
    }
    const auto best = std::min_element(manual.begin(), manual.end()) - manual.begin();
    double dev = 0.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (std::isinf(manual[c])) {
        if (!std::isinf(a.scores[c])) dev = std::numeric_limits<double>::infinity();
        continue;
      }
      dev = std::max(dev, std::abs(a.scores[c] - manual[c]) / manual[c]);
    }
    cv_ok = cv_ok && a.chosen_k == candidates[static_cast<std::size_t>(best)] && dev < 1e-9;
    log(fmt("cv seed %llu: chosen %d, manual argmin %d, score rel. diff %.1e",
            static_cast<unsigned long long>(seed), a.chosen_k, candidates[static_cast<std::size_t>(best)], dev));
  }
  return {hits >= 95 && cv_ok,
          fmt("threshold chose 2 in %d of 100; cv deterministic argmin %s", hits, cv_ok ? "yes" : "no")};
}

Outcome criterion_11() {
  const auto dir = std::filesystem::temp_directory_path() / "lrinfer_acceptance";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  DgpSpec spec;
  spec.n = 40;
  spec.t = 30;
  spec.seed = 11;
  const SimDraw draw = generate_panel(spec);
  LoadedPanel lp{{}, {}, draw.panel};
  for (Index i = 0; i < spec.n; ++i) lp.unit_ids.push_back("unit" + std::to_string(i));
  for (Index t = 0; t < spec.t; ++t) lp.time_ids.push_back(std::to_string(1990 + t));
  const std::string input = (dir / "panel.csv").string();
  save_panel(input, lp);

  auto invoke = [&](const std::vector<std::string>& args, const std::string& side_file) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli_dispatch(args, out, err);
    std::string text = std::to_string(code) + "\n" + out.str();
    if (!side_file.empty()) text += read_file(side_file);
    return text;
  };
  const std::string completed = (dir / "completed.csv").string();
  const std::vector<std::vector<std::string>> commands{
      {"fit", input, "--seed", "3", "--completed", completed},
      {"fit", input, "--seed", "3", "--split", "--k", "2", "--format", "csv", "--completed", completed},
      {"simulate", "--dgp", "sine", "--n", "30", "--t", "30", "--reps", "4", "--seed", "9", "--estimator",
       "tls,tls_ss,plain_nuclear"},
      {"simulate", "--dgp", "treatment", "--n", "30", "--t", "30", "--reps", "3", "--seed", "9", "--format", "csv"},
  };
  bool ok = true;
  int identical = 0;
  for (const auto& args : commands) {
    const std::string side = args.front() == "fit" ? completed : std::string();
    const std::string first = invoke(args, side);
    const std::string second = invoke(args, side);
    const bool same = first == second && first.front() == '0';
    identical += same ? 1 : 0;
    ok = ok && same;
  }
  std::filesystem::remove_all(dir);
  return {ok, fmt("%d of %zu commands produced byte-identical reports", identical, commands.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"estimation error matches reference values", criterion_1},
      {"TLS beats the plain nuclear-norm estimate in every cell", criterion_2},
      {"full-sample TLS beats sample splitting at small T", criterion_3},
      {"standardized entry estimates are standard normal", criterion_4},
      {"95% intervals cover at the nominal rate", criterion_5},
      {"treatment-effect inference is normal and covers", criterion_6},
      {"noiseless low-rank panels are recovered exactly", criterion_7},
      {"variance formula and solver agree with brute-force oracles", criterion_8},
      {"hand-computed identities hold", criterion_9},
      {"rank selection", criterion_10},
      {"reports are reproducible", criterion_11},
  };
  std::set<int> selected;
  for (int a = 1; a < argc; ++a) selected.insert(std::stoi(argv[a]));

  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const int id = static_cast<int>(c + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    std::printf("criterion %d: %s\n", id, criteria[c].first);
    std::fflush(stdout);
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d: %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed;
}
