#pragma once

#include "rlshift/core.hpp"

#include <cstdint>
#include <optional>
#include <utility>

namespace rlshift {

/// Dirichlet severity. An empty alpha is the no-external-shift limit.
struct ShiftSpec {
  std::optional<double> alpha;
  std::uint64_t seed = 0;
};

struct SynthTaskSpec {
  Index k = 3;
  Index d = 4;
  /// Norm of the per-class translation of the target class-conditionals.
  double epsilon = 0.0;
  Index n_source = 10000;
  Index n_target_pool = 10000;
  /// Pairwise distance between source class means.
  double class_separation = 2.0;
  std::uint64_t seed = 0;
};

struct TaskBundle {
  LabeledSet source_train;
  LabeledSet source_val;
  /// Labels are kept for evaluation only; adaptation code reads features.
  LabeledSet target_train;
  LabeledSet target_test;
  /// Empirical label marginal of target_train and target_test together.
  LabelMarginal true_target_marginal = LabelMarginal::uniform(2);

  // Manifest metadata.
  std::optional<double> alpha;
  double epsilon = 0.0;
  std::uint64_t seed = 0;

  Index classes() const noexcept { return source_train.classes; }
  Index dim() const noexcept { return source_train.dim(); }
};

/// Unit-covariance Gaussian class-conditionals with means on a regular
/// simplex, plus per-class target translations of norm epsilon.
class GaussianTask {
 public:
  static GaussianTask build(const SynthTaskSpec& spec);

  const MatrixXd& source_means() const noexcept { return source_means_; }
  const MatrixXd& target_means() const noexcept { return target_means_; }

  /// One feature row per label, drawn from the source or target conditionals.
  MatrixXd sample(const Labels& labels, bool target, RngStream& rng) const;

  /// Bayes posterior under the source conditionals and the given class prior.
  PredictionMatrix source_posterior(const MatrixXd& x, const LabelMarginal& prior) const;

 private:
  MatrixXd source_means_;  // k x d
  MatrixXd target_means_;  // k x d
};

/// One draw of Dir(alpha * p_t0); classes absent from p_t0 stay at 0.
LabelMarginal dirichlet_marginal(const LabelMarginal& p_t0, const ShiftSpec& spec);

/// Largest-remainder allocation of `total` items to the proportions of `target`.
std::vector<std::size_t> largest_remainder(const LabelMarginal& target, std::size_t total);

/// Selects, without replacement, the largest subset of the pool whose
/// largest-remainder class counts match `target`. Returned indices are sorted.
IndexList realize_marginal(const Labels& pool_labels, const LabelMarginal& target,
                           std::uint64_t seed);

/// Random disjoint (train, val) cover of [0, n) with at least one val index.
std::pair<IndexList, IndexList> split_holdout(std::size_t n, double fraction, std::uint64_t seed);

/// Applies the shift protocol to a labeled source set and a labeled target
/// pool whose base marginal is `p_t0`.
TaskBundle make_task(const LabeledSet& source, const LabeledSet& target_pool,
                     const LabelMarginal& p_t0, const ShiftSpec& shift, std::uint64_t seed);

TaskBundle synth_relaxed_task(const SynthTaskSpec& spec, const ShiftSpec& shift);

}  // namespace rlshift
