#pragma once

#include "rlshift/errors.hpp"
#include "rlshift/rng.hpp"
#include "rlshift/simplex.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace rlshift {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using Labels = std::vector<int>;
using IndexList = std::vector<std::size_t>;

inline constexpr double kProbTolerance = 1e-6;

/// A probability vector over k >= 2 classes. Always exactly normalized.
class LabelMarginal {
 public:
  /// Validates nonnegativity and |sum - 1| <= 1e-6, then renormalizes.
  explicit LabelMarginal(VectorXd probs);

  static LabelMarginal uniform(Index k);
  /// Empirical class frequencies of `labels` over k classes.
  static LabelMarginal from_labels(const Labels& labels, Index k);

  const VectorXd& probs() const noexcept { return probs_; }
  Index size() const noexcept { return probs_.size(); }
  double operator[](Index y) const { return probs_(y); }

  friend bool operator==(const LabelMarginal& a, const LabelMarginal& b) {
    return a.probs_ == b.probs_;
  }

 private:
  VectorXd probs_;
};

/// Per-class density ratios w_y ~ p_t(y) / p_s(y) against a reference p_s.
class ImportanceWeights {
 public:
  ImportanceWeights(VectorXd weights, LabelMarginal reference);

  const VectorXd& weights() const noexcept { return weights_; }
  const LabelMarginal& reference() const noexcept { return reference_; }
  Index size() const noexcept { return weights_.size(); }

  /// True when sum_y w_y p_s(y) = 1 within `tol`.
  bool feasible(double tol = kProbTolerance) const;

 private:
  VectorXd weights_;
  LabelMarginal reference_;
};

/// n x k row-stochastic matrix of classifier outputs.
class PredictionMatrix {
 public:
  explicit PredictionMatrix(MatrixXd values);

  const MatrixXd& values() const noexcept { return values_; }
  Index rows() const noexcept { return values_.rows(); }
  Index classes() const noexcept { return values_.cols(); }
  auto row(Index i) const { return values_.row(i); }

  Labels argmax() const;

 private:
  MatrixXd values_;
};

struct LabeledSet {
  MatrixXd features;  // n x d
  Labels labels;      // n entries in [0, classes)
  Index classes = 0;

  LabeledSet() = default;
  LabeledSet(MatrixXd features, Labels labels, Index classes);

  Index size() const noexcept { return features.rows(); }
  Index dim() const noexcept { return features.cols(); }
  LabeledSet subset(const IndexList& indices) const;
  LabelMarginal marginal() const { return LabelMarginal::from_labels(labels, classes); }
};

/// Joint matrix of expected prediction mass: entry (i, j) is the mean over
/// examples of f_i(x) * 1{y = j}.
struct SoftConfusion {
  MatrixXd matrix;
  /// Classes with no labeled examples; their columns are zero.
  std::vector<bool> zero_support;

  /// Column sums, i.e. the empirical label marginal of the labeled data.
  VectorXd column_marginal() const { return matrix.colwise().sum().transpose(); }
  bool has_zero_support() const;
};

LabelMarginal project_simplex(const VectorXd& v);

double l1_distance(const LabelMarginal& p, const LabelMarginal& q);

/// normalize(w .* p_s). Throws DegenerateEstimate when the product is all zero.
LabelMarginal weights_to_marginal(const ImportanceWeights& w, const LabelMarginal& p_s);

/// Clips entries below `floor` and renormalizes.
LabelMarginal floor_marginal(const LabelMarginal& p, double floor);

}  // namespace rlshift
