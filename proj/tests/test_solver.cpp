#include <gtest/gtest.h>

#include <random>

#include "lrinfer/nuclear_solver.hpp"
#include "oracles.hpp"

using namespace lrinfer;

namespace {

SolverOptions with_lambda(double lambda) {
  SolverOptions o;
  o.lambda = lambda;
  return o;
}

LowRankEstimate solve(const ObservedPanel& p, const SolverOptions& o) {
  return solve_nuclear_norm(p, estimate_propensity(p), o);
}

}  // namespace

TEST(Solver, ZeroPenaltyReproducesCompletePanel) {
  std::mt19937_64 rng(1);
  const ObservedPanel p = ObservedPanel::complete(oracle::random_normal(8, 6, rng));
  const LowRankEstimate est = solve(p, with_lambda(0.0));
  EXPECT_TRUE(est.converged);
  EXPECT_LT((est.m_tilde - p.values()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Solver, PenaltyAboveTopSingularValueGivesZero) {
  std::mt19937_64 rng(2);
  const ObservedPanel p = ObservedPanel::complete(oracle::random_normal(8, 6, rng));
  const double psi1 = oracle::jacobi_singular_values(p.values())(0);
  const LowRankEstimate est = solve(p, with_lambda(psi1 * 1.0001));
  EXPECT_EQ(est.m_tilde.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(est.converged);
}

TEST(Solver, ThreeByThreeWithOneMaskedCellMatchesOracle) {
  Matrix y(3, 3);
  y << 1.2, -0.4, 2.0, 0.3, 1.1, -0.7, -1.5, 0.8, 0.6;
  Matrix w = Matrix::Ones(3, 3);
  w(1, 2) = 0.0;
  const ObservedPanel p(y, w);
  const PropensityEstimate prop = estimate_propensity(p);
  const LowRankEstimate est = solve_nuclear_norm(p, prop, with_lambda(0.5));
  const double oracle_min = oracle::subgradient_minimum(p.values(), w, prop.p_hat, 0.5);
  const double ours = nuclear_objective(p, prop, est.m_tilde, 0.5);
  EXPECT_NEAR(ours, oracle_min, 1e-6);
  EXPECT_NEAR(ours, oracle::objective(p.values(), w, prop.p_hat, 0.5, est.m_tilde), 1e-12);
}

TEST(Solver, ObjectiveTraceIsMonotoneAndBelowStart) {
  std::mt19937_64 rng(3);
  for (StepRule rule : {StepRule::Lipschitz, StepRule::Backtracking}) {
    const Matrix w = oracle::random_mask(30, 25, 0.5, rng);
    const ObservedPanel p(oracle::random_normal(30, 2, rng) * oracle::random_normal(25, 2, rng).transpose() +
                              0.5 * oracle::random_normal(30, 25, rng),
                          w);
    SolverOptions o;
    o.step_rule = rule;
    const LowRankEstimate est = solve(p, o);
    ASSERT_GE(est.objective_trace.size(), 2u);
    for (std::size_t k = 1; k < est.objective_trace.size(); ++k) {
      EXPECT_LE(est.objective_trace[k], est.objective_trace[k - 1]);
    }
    const PropensityEstimate prop = estimate_propensity(p);
    EXPECT_LE(nuclear_objective(p, prop, est.m_tilde, est.lambda),
              nuclear_objective(p, prop, Matrix::Zero(30, 25), est.lambda));
    EXPECT_NEAR(est.objective_trace.back(), nuclear_objective(p, prop, est.m_tilde, est.lambda),
                1e-9 * est.objective_trace.front());
    for (Index k = 1; k < est.singular_values.size(); ++k) {
      EXPECT_GE(est.singular_values(k - 1), est.singular_values(k));
    }
  }
}

TEST(Solver, StepRulesReachTheSameMinimum) {
  std::mt19937_64 rng(4);
  const Matrix w = oracle::random_mask(12, 10, 0.6, rng);
  const ObservedPanel p(oracle::random_normal(12, 10, rng), w);
  const PropensityEstimate prop = estimate_propensity(p);
  SolverOptions base = with_lambda(1.5);
  base.rel_tol = 1e-12;
  base.max_iters = 5000;
  SolverOptions fixed = base;
  fixed.step_rule = StepRule::Fixed;
  fixed.step_size = 0.5 * prop.min();
  SolverOptions back = base;
  back.step_rule = StepRule::Backtracking;
  const double f0 = nuclear_objective(p, prop, solve_nuclear_norm(p, prop, base).m_tilde, 1.5);
  const double f1 = nuclear_objective(p, prop, solve_nuclear_norm(p, prop, fixed).m_tilde, 1.5);
  const double f2 = nuclear_objective(p, prop, solve_nuclear_norm(p, prop, back).m_tilde, 1.5);
  EXPECT_NEAR(f0, f1, 1e-7 * f0);
  EXPECT_NEAR(f0, f2, 1e-7 * f0);
}

TEST(Solver, RankNonincreasingInPenalty) {
  std::mt19937_64 rng(5);
  const Matrix w = oracle::random_mask(20, 15, 0.7, rng);
  const ObservedPanel p(oracle::random_normal(20, 3, rng) * oracle::random_normal(15, 3, rng).transpose() +
                            oracle::random_normal(20, 15, rng),
                        w);
  Index previous = std::numeric_limits<Index>::max();
  for (double lambda : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
    SolverOptions o = with_lambda(lambda);
    o.rel_tol = 1e-10;
    o.max_iters = 3000;
    const Index r = numerical_rank(solve(p, o).singular_values, 1e-8);
    EXPECT_LE(r, previous) << "lambda=" << lambda;
    previous = r;
  }
}

TEST(Solver, UnobservedValuesHaveNoInfluence) {
  std::mt19937_64 rng(6);
  const Matrix w = oracle::random_mask(10, 9, 0.5, rng);
  Matrix y = oracle::random_normal(10, 9, rng);
  Matrix y2 = y;
  for (Index i = 0; i < 10; ++i) {
    for (Index t = 0; t < 9; ++t) {
      if (w(i, t) == 0.0) y2(i, t) = 1e8 * (i + 1);
    }
  }
  const LowRankEstimate a = solve(ObservedPanel(y, w), {});
  const LowRankEstimate b = solve(ObservedPanel(y2, w), {});
  EXPECT_EQ(a.m_tilde, b.m_tilde);
  EXPECT_EQ(a.lambda, b.lambda);
}

TEST(Solver, NonConvergenceIsWarningGrade) {
  std::mt19937_64 rng(7);
  const ObservedPanel p(oracle::random_normal(15, 15, rng), oracle::random_mask(15, 15, 0.5, rng));
  SolverOptions o;
  o.max_iters = 2;
  o.rel_tol = 1e-15;
  const LowRankEstimate soft = solve(p, o);
  EXPECT_FALSE(soft.converged);
  EXPECT_EQ(soft.iterations, 2);
  o.fail_on_nonconvergence = true;
  try {
    solve(p, o);
    FAIL();
  } catch (const DidNotConvergeError& e) {
    EXPECT_EQ(e.code(), ErrorCode::DidNotConverge);
    EXPECT_EQ(e.estimate().m_tilde, soft.m_tilde);
    EXPECT_EQ(e.estimate().objective_trace, soft.objective_trace);
  }
}

TEST(Solver, OptionValidation) {
  const ObservedPanel p = ObservedPanel::complete(Matrix::Ones(3, 3));
  SolverOptions o;
  o.rel_tol = 0.0;
  EXPECT_THROW(solve(p, o), Error);
  o = {};
  o.max_iters = 0;
  EXPECT_THROW(solve(p, o), Error);
  o = {};
  o.lambda = -1.0;
  EXPECT_THROW(solve(p, o), Error);
  o = {};
  o.step_rule = StepRule::Fixed;
  EXPECT_THROW(solve(p, o), Error);
}

TEST(DefaultLambda, PureNoiseIsAboutTwenty) {
  std::mt19937_64 rng(8);
  const ObservedPanel p = ObservedPanel::complete(oracle::random_normal(100, 100, rng));
  const double lambda = default_lambda(p, estimate_propensity(p));
  EXPECT_GT(lambda, 15.0);
  EXPECT_LT(lambda, 25.0);
}

TEST(DefaultLambda, ZeroPanel) {
  const ObservedPanel p = ObservedPanel::complete(Matrix::Zero(5, 4));
  EXPECT_EQ(default_lambda(p, estimate_propensity(p)), 0.0);
}

TEST(DefaultLambda, HomogeneousOfDegreeOne) {
  std::mt19937_64 rng(9);
  const Matrix w = oracle::random_mask(20, 30, 0.6, rng);
  const Matrix y = oracle::random_normal(20, 30, rng);
  const ObservedPanel p(y, w);
  const ObservedPanel p3(3.0 * y, w);
  EXPECT_NEAR(default_lambda(p3, estimate_propensity(p3)), 3.0 * default_lambda(p, estimate_propensity(p)),
              1e-12);
}

TEST(DefaultLambda, IgnoresAdditiveRowAndColumnEffects) {
  std::mt19937_64 rng(10);
  const Matrix noise = oracle::random_normal(25, 20, rng);
  const Matrix shift = oracle::random_normal(25, 1, rng) * Matrix::Ones(1, 20) +
                       Matrix::Ones(25, 1) * oracle::random_normal(1, 20, rng);
  const ObservedPanel a = ObservedPanel::complete(noise);
  const ObservedPanel b = ObservedPanel::complete(noise + 10.0 * shift);
  EXPECT_NEAR(default_lambda(a, estimate_propensity(a)), default_lambda(b, estimate_propensity(b)), 1e-9);
}

TEST(DefaultLambda, ScaleOptionMultiplies) {
  std::mt19937_64 rng(11);
  const ObservedPanel p = ObservedPanel::complete(oracle::random_normal(10, 10, rng));
  const PropensityEstimate prop = estimate_propensity(p);
  SolverOptions o;
  o.lambda_scale = 1.0;
  EXPECT_NEAR(solve(p, o).lambda, 0.5 * default_lambda(p, prop), 1e-14);
}
