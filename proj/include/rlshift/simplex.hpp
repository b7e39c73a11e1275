#pragma once

// Scalar-generic kernels over Eigen expressions. The value types in core.hpp
// wrap these with validation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace rlshift {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Euclidean projection onto {x : x >= 0, sum(x) = 1}, sort-based.
template <typename Derived>
Vector<typename Derived::Scalar> simplex_projection(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index k = v.size();
  std::vector<Scalar> sorted(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) sorted[i] = v(i);
  std::sort(sorted.begin(), sorted.end(), std::greater<Scalar>());

  Scalar running = Scalar(0);
  Scalar theta = Scalar(0);
  for (Eigen::Index j = 0; j < k; ++j) {
    running += sorted[j];
    const Scalar candidate = (running - Scalar(1)) / Scalar(j + 1);
    if (sorted[j] - candidate > Scalar(0)) theta = candidate;
  }
  Vector<Scalar> out = (v.array() - theta).max(Scalar(0)).matrix();
  // Re-normalize away the rounding left by the threshold subtraction.
  const Scalar total = out.sum();
  if (total > Scalar(0)) out /= total;
  return out;
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar l1_norm_difference(const Eigen::MatrixBase<DerivedA>& a,
                                             const Eigen::MatrixBase<DerivedB>& b) {
  return (a - b).template lpNorm<1>();
}

/// Row-wise softmax, numerically stabilized by the row max.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> softmax_rows(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out =
      (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

/// Index of the row maximum, ties toward the lowest index.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::MatrixBase<Derived>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

}  // namespace rlshift
