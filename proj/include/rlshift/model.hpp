#pragma once

#include "rlshift/core.hpp"

#include <string_view>
#include <vector>

namespace rlshift {

enum class ModelKind { logistic, mlp };

ModelKind model_kind_from_name(std::string_view name);
std::string_view model_kind_name(ModelKind kind);

struct ModelSpec {
  ModelKind kind = ModelKind::logistic;
  Index hidden_units = 0;  // mlp only
  Index input_dim = 0;
  Index classes = 0;

  Index parameter_count() const;
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Flat parameter vector. Logistic: W (k x d, row-major), b (k).
/// MLP: W1 (h x d), b1 (h), W2 (k x h), b2 (k); tanh hidden layer.
VectorXd init_parameters(const ModelSpec& spec, std::uint64_t seed);

MatrixXd model_logits(const ModelSpec& spec, const VectorXd& params, const MatrixXd& x);

/// Adds sum_i coeff_i * grad(CE(x_i, y_i)) into `grad` and returns
/// sum_i coeff_i * CE(x_i, y_i). Rows with coeff 0 contribute nothing.
double accumulate_cross_entropy(const ModelSpec& spec, const VectorXd& params, const MatrixXd& x,
                                const Labels& labels, const VectorXd& coeffs, VectorXd& grad);

struct LossGradient {
  double loss = 0.0;
  VectorXd gradient;
};

/// Mean (optionally per-example weighted) cross-entropy plus 0.5 * l2 * |theta|^2.
LossGradient cross_entropy_loss(const ModelSpec& spec, const VectorXd& params, const MatrixXd& x,
                                const Labels& labels, const VectorXd* example_weights, double l2);

struct Model {
  ModelSpec spec;
  VectorXd parameters;
  /// Source-validation accuracy after each epoch.
  std::vector<double> training_log;
  int best_epoch = -1;

  PredictionMatrix predict(const MatrixXd& x) const;
};

}  // namespace rlshift
