#include "rlshift/core.hpp"

#include <cmath>
#include <string>

namespace rlshift {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::DimensionError: return "DimensionError";
    case ErrorKind::DegenerateEstimate: return "DegenerateEstimate";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::InfeasibleMarginal: return "InfeasibleMarginal";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::PairingError: return "PairingError";
    case ErrorKind::DivergedError: return "DivergedError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Error";
}

LabelMarginal::LabelMarginal(VectorXd probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) {
    throw Error(ErrorKind::InvalidInput, "a label marginal needs at least 2 classes");
  }
  if (!probs_.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite probability");
  if ((probs_.array() < 0.0).any()) throw Error(ErrorKind::InvalidInput, "negative probability");
  const double total = probs_.sum();
  if (std::abs(total - 1.0) > kProbTolerance) {
    throw Error(ErrorKind::InvalidInput,
                "probabilities sum to " + std::to_string(total) + ", expected 1");
  }
  probs_ /= total;
}

LabelMarginal LabelMarginal::uniform(Index k) {
  return LabelMarginal(VectorXd::Constant(k, 1.0 / static_cast<double>(k)));
}

LabelMarginal LabelMarginal::from_labels(const Labels& labels, Index k) {
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "no labels");
  VectorXd counts = VectorXd::Zero(k);
  for (int y : labels) {
    if (y < 0 || y >= k) throw Error(ErrorKind::InvalidInput, "label out of range");
    counts(y) += 1.0;
  }
  return LabelMarginal(counts / static_cast<double>(labels.size()));
}

ImportanceWeights::ImportanceWeights(VectorXd weights, LabelMarginal reference)
    : weights_(std::move(weights)), reference_(std::move(reference)) {
  if (weights_.size() != reference_.size()) {
    throw Error(ErrorKind::DimensionError, "weights and reference marginal differ in size");
  }
  if (!weights_.allFinite() || (weights_.array() < 0.0).any()) {
    throw Error(ErrorKind::InvalidInput, "importance weights must be finite and nonnegative");
  }
}

bool ImportanceWeights::feasible(double tol) const {
  return std::abs(weights_.dot(reference_.probs()) - 1.0) <= tol;
}

PredictionMatrix::PredictionMatrix(MatrixXd values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite prediction");
  if ((values_.array() < 0.0).any()) throw Error(ErrorKind::InvalidInput, "negative prediction");
  for (Index i = 0; i < values_.rows(); ++i) {
    const double total = values_.row(i).sum();
    if (std::abs(total - 1.0) > kProbTolerance) {
      throw Error(ErrorKind::InvalidInput,
                  "prediction row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
    values_.row(i) /= total;
  }
}

Labels PredictionMatrix::argmax() const {
  Labels out(static_cast<std::size_t>(values_.rows()));
  for (Index i = 0; i < values_.rows(); ++i) {
    out[i] = static_cast<int>(argmax_lowest(values_.row(i)));
  }
  return out;
}

LabeledSet::LabeledSet(MatrixXd f, Labels l, Index k)
    : features(std::move(f)), labels(std::move(l)), classes(k) {
  if (features.rows() != static_cast<Index>(labels.size())) {
    throw Error(ErrorKind::DimensionError, "feature rows and label count differ");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) throw Error(ErrorKind::InvalidInput, "label out of range");
  }
}

LabeledSet LabeledSet::subset(const IndexList& indices) const {
  MatrixXd f(static_cast<Index>(indices.size()), features.cols());
  Labels l(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    f.row(static_cast<Index>(r)) = features.row(static_cast<Index>(indices[r]));
    l[r] = labels[indices[r]];
  }
  LabeledSet out;
  out.features = std::move(f);
  out.labels = std::move(l);
  out.classes = classes;
  return out;
}

bool SoftConfusion::has_zero_support() const {
  for (bool z : zero_support) {
    if (z) return true;
  }
  return false;
}

LabelMarginal project_simplex(const VectorXd& v) {
  if (v.size() < 2) throw Error(ErrorKind::InvalidInput, "projection needs k >= 2");
  if (!v.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite entry in projection input");
  return LabelMarginal(simplex_projection(v));
}

double l1_distance(const LabelMarginal& p, const LabelMarginal& q) {
  if (p.size() != q.size()) throw Error(ErrorKind::DimensionError, "marginals differ in size");
  return l1_norm_difference(p.probs(), q.probs());
}

LabelMarginal weights_to_marginal(const ImportanceWeights& w, const LabelMarginal& p_s) {
  if (w.size() != p_s.size()) throw Error(ErrorKind::DimensionError, "weights and p_s differ");
  VectorXd product = w.weights().cwiseProduct(p_s.probs());
  const double total = product.sum();
  if (!(total > 0.0)) throw Error(ErrorKind::DegenerateEstimate, "weights times p_s is all zero");
  return LabelMarginal(product / total);
}

LabelMarginal floor_marginal(const LabelMarginal& p, double floor) {
  VectorXd clipped = p.probs().cwiseMax(floor);
  return LabelMarginal(clipped / clipped.sum());
}

}  // namespace rlshift
