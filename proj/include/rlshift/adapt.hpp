#pragma once

#include "rlshift/core.hpp"
#include "rlshift/estimate.hpp"
#include "rlshift/model.hpp"
#include "rlshift/shift.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rlshift {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 0.1;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  bool early_stop_on_source_val = true;
  /// Revert the epoch and halve the learning rate when the epoch objective
  /// increases.
  bool safeguard = true;

  void validate() const;
};

struct PseudoLabelConfig {
  double tau = 0.9;
  double lambda_max = 1.0;
  /// Fraction of total steps over which the unlabeled weight ramps from 0.
  double ramp_fraction = 0.4;

  void validate() const;
  double weight_at(long step, long total_steps) const;
};

struct CorrectionFlags {
  bool resample = false;
  bool reweight = false;
  EstimatorKind estimator = EstimatorKind::rlls;

  /// "none", "RS", "RW" or "RS+RW".
  std::string label() const;
  friend bool operator==(const CorrectionFlags&, const CorrectionFlags&) = default;
};

enum class Algorithm { source_only, pseudolabel, iw_erm };

Algorithm algorithm_from_name(std::string_view name);
std::string_view algorithm_name(Algorithm a);

/// `size` draws with replacement, split as evenly as possible over the
/// nonempty classes, then uniform within each class. Returned shuffled.
IndexList class_balanced_indices(const Labels& labels, std::size_t size, std::uint64_t seed);

struct ReweightResult {
  PredictionMatrix predictions;
  /// Rows whose reweighted mass was zero; they are returned unchanged.
  std::vector<Index> unchanged_rows;
};

/// Row-wise f'_j proportional to (p_hat_t(j) / p_train(j)) * f_j.
ReweightResult reweight_predictions(const PredictionMatrix& preds, const LabelMarginal& p_hat_t,
                                    const LabelMarginal& p_train);

/// Minibatch gradient descent on (class-weighted) cross-entropy.
/// `class_weights`, when given, multiplies each example's loss by w(y).
Model train_erm(const ModelSpec& spec, const LabeledSet& train, const LabeledSet& val,
                const TrainConfig& cfg, const VectorXd* class_weights = nullptr);

Model pseudolabel_train(const ModelSpec& spec, const LabeledSet& source, const LabeledSet& source_val,
                        const MatrixXd& target_unlabeled, const TrainConfig& cfg,
                        const PseudoLabelConfig& pl, const CorrectionFlags& corrections);

/// Importance-weighted ERM: per-class source weights re-estimated with RLLS
/// from the current model at the start of every epoch.
Model iw_erm_train(const ModelSpec& spec, const LabeledSet& source, const LabeledSet& source_val,
                   const MatrixXd& target_unlabeled, const TrainConfig& cfg,
                   const CorrectionFlags& corrections);

struct AdaptConfig {
  ModelSpec model;
  TrainConfig train;
  PseudoLabelConfig pseudolabel;
  EstimatorOptions estimator;
  /// Estimates are clipped at this floor before re-weighting.
  double marginal_floor = 1e-6;
};

struct AdaptResult {
  Model model;
  std::optional<LabelMarginal> p_hat_t;
  /// p_hat_t after flooring; the numerator of the re-weighting ratio.
  std::optional<LabelMarginal> reweight_marginal;
  /// Label marginal the model was effectively trained under.
  LabelMarginal train_marginal = LabelMarginal::uniform(2);
  bool reweighted = false;
  std::vector<std::string> diagnostics;
  std::vector<std::string> warnings;

  /// Model outputs, re-weighted when `reweighted` is set.
  PredictionMatrix predict(const MatrixXd& x) const;
};

AdaptResult meta_adapt(Algorithm algorithm, const TaskBundle& bundle, const CorrectionFlags& corrections,
                       const AdaptConfig& cfg);

}  // namespace rlshift
