#pragma once

#include "rlshift/core.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rlshift {

struct RllsConfig {
  /// Regularization weight. `run_rlls` fills an unset value from
  /// `default_rlls_lambda`; `rlls_estimate` reads unset as 0.
  std::optional<double> lambda;
  bool squared_norms = true;
  int max_iters = 10000;
  double step_tolerance = 1e-10;
};

/// Default regularization for a confusion matrix built from `n_val` labeled
/// examples: 1/sqrt(n) for the unsquared objective, its square for the
/// squared objective (the penalty enters at the squared scale).
double default_rlls_lambda(std::size_t n_val, bool squared_norms);

struct MllsConfig {
  double tolerance = 1e-8;
  int max_iters = 10000;
  /// Initial marginal; p_s when unset.
  std::optional<LabelMarginal> init;
  double denominator_floor = 1e-12;
};

struct RllsResult {
  ImportanceWeights weights;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  bool ill_conditioned = false;
  std::vector<std::string> diagnostics;
};

struct MllsResult {
  LabelMarginal marginal;
  bool converged = false;
  int iterations = 0;
  /// Mean log-likelihood at the initial point and after each update.
  std::vector<double> log_likelihood;
  bool floored = false;
  std::vector<std::string> diagnostics;
};

SoftConfusion soft_confusion(const PredictionMatrix& preds, const Labels& labels);

LabelMarginal mean_prediction(const PredictionMatrix& preds);

/// Regularized moment matching. Solved in q = w .* p_s coordinates, where
/// the feasible set is the simplex, by projected gradient descent.
RllsResult rlls_estimate(const SoftConfusion& confusion, const LabelMarginal& mu,
                         const LabelMarginal& p_s, const RllsConfig& cfg = {});

/// EM fixed point of the target likelihood under the source-calibrated model.
MllsResult mlls_estimate(const PredictionMatrix& preds_target, const LabelMarginal& p_s,
                         const MllsConfig& cfg = {});

LabelMarginal baseline_estimate(const PredictionMatrix& preds_target);

/// Mean log-likelihood of target predictions under marginal `p`.
double mlls_log_likelihood(const PredictionMatrix& preds_target, const LabelMarginal& p,
                           const LabelMarginal& p_s);

enum class EstimatorKind { rlls, mlls, baseline };

EstimatorKind estimator_from_name(std::string_view name);
std::string_view estimator_name(EstimatorKind kind);

struct EstimationInputs {
  const PredictionMatrix* source_val_preds = nullptr;
  const Labels* source_val_labels = nullptr;
  const PredictionMatrix* target_preds = nullptr;
  /// Label marginal the classifier was trained under. MLLS treats the
  /// predictions as calibrated against it.
  const LabelMarginal* train_marginal = nullptr;
};

struct EstimatorOptions {
  RllsConfig rlls;
  MllsConfig mlls;
};

struct EstimateResult {
  LabelMarginal marginal;
  ImportanceWeights weights;
  std::vector<std::string> diagnostics;
};

using EstimatorFn = EstimateResult (*)(const EstimationInputs&, const EstimatorOptions&);

/// Name-keyed registry so estimators are interchangeable in configs and flags.
EstimatorFn lookup_estimator(EstimatorKind kind);

EstimateResult run_rlls(const EstimationInputs& in, const EstimatorOptions& opt);
EstimateResult run_mlls(const EstimationInputs& in, const EstimatorOptions& opt);
EstimateResult run_baseline(const EstimationInputs& in, const EstimatorOptions& opt);

inline EstimateResult estimate_marginal(EstimatorKind kind, const EstimationInputs& in,
                                        const EstimatorOptions& opt = {}) {
  return lookup_estimator(kind)(in, opt);
}

}  // namespace rlshift
