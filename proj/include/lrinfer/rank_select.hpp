#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lrinfer/error.hpp"
#include "lrinfer/nuclear_solver.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/two_step.hpp"

namespace lrinfer {

enum class RankMethod { Threshold, CrossValidation };

struct RankSelection {
  RankMethod method = RankMethod::Threshold;
  int chosen_k = 1;

  // Threshold method.
  Vector singular_values;
  double threshold = 0.0;
  int raw_count = 0;  // before the floor at 1

  // Cross-validation: summed holdout MSE per candidate (+inf when a fit failed).
  std::vector<int> candidates;
  std::vector<double> scores;
};

inline const std::vector<int>& default_cv_candidates() {
  static const std::vector<int> kCandidates{2, 4, 6, 8, 10};
  return kCandidates;
}

/// Counts singular values of M~ at or above ((N+T)/2)^{11/20} * ||M~||^{1/4}
/// with ||.|| the operator norm. The count is floored at 1.
inline RankSelection rank_threshold(const LowRankEstimate& est, Index n, Index t) {
  const Vector& s = est.singular_values;
  detail::require(s.size() > 0 && s(0) > 0.0, ErrorCode::ZeroMatrix,
                  "penalized estimate is the zero matrix");
  RankSelection sel;
  sel.method = RankMethod::Threshold;
  sel.singular_values = s;
  sel.threshold = std::pow(0.5 * static_cast<double>(n + t), 11.0 / 20.0) * std::pow(s(0), 0.25);
  for (Index r = 0; r < s.size(); ++r) {
    if (s(r) >= sel.threshold) ++sel.raw_count;
  }
  sel.chosen_k = std::max(sel.raw_count, 1);
  return sel;
}

/// Training/holdout masks for one cross-validation split.
struct CvSplit {
  Matrix train;    // omega * X
  Matrix holdout;  // omega * (1 - X)
};

/// Splits observed cells with independent Bernoulli draws X_it of
/// probability sum(omega) / NT. Draws are made for every cell in
/// column-major order, so they do not depend on the mask.
inline std::vector<CvSplit> cv_splits(const Matrix& mask, int n_splits, std::uint64_t seed) {
  detail::require(n_splits >= 1, ErrorCode::InvalidArgument, "need at least one split");
  const double keep = mask.sum() / static_cast<double>(mask.size());
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution draw(keep);
  std::vector<CvSplit> splits;
  splits.reserve(static_cast<std::size_t>(n_splits));
  for (int s = 0; s < n_splits; ++s) {
    CvSplit split{Matrix::Zero(mask.rows(), mask.cols()), Matrix::Zero(mask.rows(), mask.cols())};
    for (Index t = 0; t < mask.cols(); ++t) {
      for (Index i = 0; i < mask.rows(); ++i) {
        const bool x = draw(rng);
        if (mask(i, t) == 0.0) continue;
        (x ? split.train : split.holdout)(i, t) = 1.0;
      }
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

/// Chooses K by holdout MSE summed over `n_splits` Bernoulli subsamples;
/// ties go to the smaller K.
inline RankSelection rank_cv(const ObservedPanel& panel, std::vector<int> candidates,
                             const SolverOptions& opts = {}, std::uint64_t seed = 0,
                             int n_splits = 5) {
  detail::require(!candidates.empty(), ErrorCode::InvalidArgument, "no candidate ranks");
  for (int k : candidates) {
    detail::require(k >= 1, ErrorCode::InvalidArgument, "candidate ranks must be positive");
  }
  opts.validate();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  RankSelection sel;
  sel.method = RankMethod::CrossValidation;
  sel.candidates = candidates;
  sel.scores.assign(candidates.size(), 0.0);

  for (const CvSplit& split : cv_splits(panel.mask(), n_splits, seed)) {
    std::optional<ObservedPanel> train;
    std::optional<LowRankEstimate> est;
    try {
      train.emplace(panel.values(), split.train);
      est = solve_nuclear_norm(*train, estimate_propensity(*train), opts);
    } catch (const Error&) {
      // Subsample lost a whole row or column: no candidate can be scored.
      for (double& s : sel.scores) s = kInf;
      continue;
    }
    const double n_holdout = split.holdout.sum();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (!std::isfinite(sel.scores[c])) continue;
      try {
        const FactorFit fit = tls_refit(*train, *est, candidates[c]);
        if (n_holdout > 0.0) {
          const double sse =
              split.holdout.cwiseProduct((fit.m_hat - panel.values()).cwiseAbs2()).sum();
          sel.scores[c] += sse / n_holdout;
        }
      } catch (const Error&) {
        sel.scores[c] = kInf;
      }
    }
  }

  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (!std::isfinite(sel.scores[c])) continue;
    if (!best || sel.scores[c] < sel.scores[*best] ||
        (sel.scores[c] == sel.scores[*best] && candidates[c] < candidates[*best])) {
      best = c;
    }
  }
  if (candidates.size() == 1) {
    sel.chosen_k = candidates.front();
    return sel;
  }
  detail::require(best.has_value(), ErrorCode::AllCandidatesFailed,
                  "every candidate rank failed in cross-validation");
  sel.chosen_k = candidates[*best];
  return sel;
}

}  // namespace lrinfer
