#include "rlshift/shift.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace rlshift {

namespace {

void validate(const SynthTaskSpec& spec) {
  if (spec.k < 2) throw Error(ErrorKind::InvalidInput, "k must be >= 2");
  if (spec.d < spec.k - 1) throw Error(ErrorKind::InvalidInput, "d must be >= k - 1");
  if (!(spec.epsilon >= 0.0)) throw Error(ErrorKind::InvalidInput, "epsilon must be >= 0");
  if (!(spec.class_separation > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "class_separation must be positive");
  }
  if (spec.n_source < spec.k || spec.n_target_pool < spec.k) {
    throw Error(ErrorKind::InvalidInput, "sample counts must be >= k");
  }
}

Labels uniform_labels(Index n, Index k, RngStream& rng) {
  Labels out(static_cast<std::size_t>(n));
  for (auto& y : out) y = static_cast<int>(rng.index(static_cast<std::size_t>(k)));
  return out;
}

}  // namespace

GaussianTask GaussianTask::build(const SynthTaskSpec& spec) {
  validate(spec);
  const Index k = spec.k;
  // Scaled basis vectors have pairwise distance class_separation; centering
  // leaves them in a (k-1)-dimensional subspace.
  MatrixXd vertices = MatrixXd::Identity(k, k) * (spec.class_separation / std::sqrt(2.0));
  vertices.colwise() -= vertices.rowwise().mean();
  Eigen::HouseholderQR<MatrixXd> qr(vertices);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(k, k - 1);
  const MatrixXd coords = q.transpose() * vertices;  // (k-1) x k

  GaussianTask task;
  task.source_means_ = MatrixXd::Zero(k, spec.d);
  task.source_means_.leftCols(k - 1) = coords.transpose();

  RngStream rng(spec.seed, stream::kShiftDirections);
  task.target_means_ = task.source_means_;
  for (Index y = 0; y < k; ++y) {
    VectorXd dir(spec.d);
    do {
      for (Index j = 0; j < spec.d; ++j) dir(j) = rng.normal();
    } while (dir.norm() == 0.0);
    task.target_means_.row(y) += spec.epsilon * dir.normalized().transpose();
  }
  return task;
}

MatrixXd GaussianTask::sample(const Labels& labels, bool target, RngStream& rng) const {
  const MatrixXd& means = target ? target_means_ : source_means_;
  MatrixXd x(static_cast<Index>(labels.size()), means.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    x.row(i) += means.row(labels[static_cast<std::size_t>(i)]);
  }
  return x;
}

PredictionMatrix GaussianTask::source_posterior(const MatrixXd& x, const LabelMarginal& prior) const {
  const Index k = source_means_.rows();
  MatrixXd logits(x.rows(), k);
  for (Index y = 0; y < k; ++y) {
    const double log_prior = prior[y] > 0.0 ? std::log(prior[y]) : -1e300;
    logits.col(y) =
        (-0.5 * (x.rowwise() - source_means_.row(y)).rowwise().squaredNorm()).array() + log_prior;
  }
  return PredictionMatrix(softmax_rows(logits));
}

LabelMarginal dirichlet_marginal(const LabelMarginal& p_t0, const ShiftSpec& spec) {
  if (!spec.alpha) return p_t0;
  const double alpha = *spec.alpha;
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidInput, "alpha must be positive");
  RngStream rng(spec.seed, stream::kDirichlet);
  const Index k = p_t0.size();
  // Gamma draws in log space: tiny shapes underflow otherwise.
  VectorXd log_g = VectorXd::Constant(k, -std::numeric_limits<double>::infinity());
  for (Index y = 0; y < k; ++y) {
    const double shape = alpha * p_t0[y];
    if (shape <= 0.0) continue;
    if (shape >= 1.0) {
      log_g(y) = std::log(rng.gamma(shape));
    } else {
      // G(shape) = G(shape + 1) * U^(1/shape)
      const double g = rng.gamma(shape + 1.0);
      const double u = rng.uniform();
      log_g(y) = std::log(g) + std::log(u) / shape;
    }
  }
  const double top = log_g.maxCoeff();
  VectorXd probs = (log_g.array() - top).exp().matrix();
  return LabelMarginal(probs / probs.sum());
}

std::vector<std::size_t> largest_remainder(const LabelMarginal& target, std::size_t total) {
  const auto k = static_cast<std::size_t>(target.size());
  std::vector<std::size_t> counts(k);
  std::vector<double> remainder(k);
  std::size_t assigned = 0;
  for (std::size_t y = 0; y < k; ++y) {
    const double raw = static_cast<double>(total) * target[static_cast<Index>(y)];
    counts[y] = static_cast<std::size_t>(std::floor(raw));
    remainder[y] = raw - std::floor(raw);
    assigned += counts[y];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total && i < k; ++i) {
    if (target[static_cast<Index>(order[i])] > 0.0) {
      ++counts[order[i]];
      ++assigned;
    }
  }
  return counts;
}

IndexList realize_marginal(const Labels& pool_labels, const LabelMarginal& target,
                           std::uint64_t seed) {
  const auto k = static_cast<std::size_t>(target.size());
  std::vector<IndexList> by_class(k);
  for (std::size_t i = 0; i < pool_labels.size(); ++i) {
    const int y = pool_labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw Error(ErrorKind::InvalidInput, "pool label out of range");
    }
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  std::string missing;
  for (std::size_t y = 0; y < k; ++y) {
    if (target[static_cast<Index>(y)] > 0.0 && by_class[y].empty()) {
      missing += (missing.empty() ? "" : ", ") + std::to_string(y);
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::InfeasibleMarginal, "target requires classes absent from the pool: " + missing);
  }

  // Feasibility is not monotone in N under largest-remainder rounding, so
  // scan downward from an upper bound.
  double bound = static_cast<double>(pool_labels.size());
  for (std::size_t y = 0; y < k; ++y) {
    const double t = target[static_cast<Index>(y)];
    if (t > 0.0) bound = std::min(bound, (static_cast<double>(by_class[y].size()) + 1.0) / t);
  }
  std::size_t n = static_cast<std::size_t>(std::floor(bound));
  std::vector<std::size_t> counts;
  for (; n > 0; --n) {
    counts = largest_remainder(target, n);
    bool fits = true;
    for (std::size_t y = 0; y < k && fits; ++y) fits = counts[y] <= by_class[y].size();
    if (fits) break;
  }

  RngStream rng(seed, stream::kRealize);
  IndexList out;
  out.reserve(n);
  for (std::size_t y = 0; y < k; ++y) {
    IndexList& members = by_class[y];
    std::shuffle(members.begin(), members.end(), rng);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(counts[y]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<IndexList, IndexList> split_holdout(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::InvalidInput, "holdout fraction must lie in (0, 1)");
  }
  if (n < 2) throw Error(ErrorKind::InvalidInput, "holdout split needs n >= 2");
  auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);

  IndexList perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng(seed, stream::kSourceSplit);
  std::shuffle(perm.begin(), perm.end(), rng);
  IndexList val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  IndexList train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

TaskBundle make_task(const LabeledSet& source, const LabeledSet& target_pool,
                     const LabelMarginal& p_t0, const ShiftSpec& shift, std::uint64_t seed) {
  if (source.classes != target_pool.classes || source.dim() != target_pool.dim()) {
    throw Error(ErrorKind::DimensionError, "source and target pool disagree on k or d");
  }
  TaskBundle bundle;
  const auto [s_train, s_val] =
      split_holdout(static_cast<std::size_t>(source.size()), 0.2, derive_seed({seed, stream::kSourceSplit}));
  bundle.source_train = source.subset(s_train);
  bundle.source_val = source.subset(s_val);

  const LabelMarginal p_t = dirichlet_marginal(p_t0, shift);
  const LabeledSet realized = target_pool.subset(realize_marginal(target_pool.labels, p_t, shift.seed));
  const auto [t_train, t_test] = split_holdout(static_cast<std::size_t>(realized.size()), 0.2,
                                               derive_seed({seed, stream::kTargetSplit}));
  bundle.target_train = realized.subset(t_train);
  bundle.target_test = realized.subset(t_test);
  bundle.true_target_marginal = realized.marginal();
  bundle.alpha = shift.alpha;
  bundle.seed = seed;
  return bundle;
}

TaskBundle synth_relaxed_task(const SynthTaskSpec& spec, const ShiftSpec& shift) {
  const GaussianTask task = GaussianTask::build(spec);

  RngStream source_label_rng(spec.seed, stream::kSourceLabels);
  RngStream source_feature_rng(spec.seed, stream::kSourceFeatures);
  Labels source_labels = uniform_labels(spec.n_source, spec.k, source_label_rng);
  MatrixXd source_x = task.sample(source_labels, false, source_feature_rng);

  RngStream pool_label_rng(spec.seed, stream::kPoolLabels);
  RngStream pool_feature_rng(spec.seed, stream::kPoolFeatures);
  Labels pool_labels = uniform_labels(spec.n_target_pool, spec.k, pool_label_rng);
  MatrixXd pool_x = task.sample(pool_labels, true, pool_feature_rng);

  TaskBundle bundle = make_task(LabeledSet(std::move(source_x), std::move(source_labels), spec.k),
                                LabeledSet(std::move(pool_x), std::move(pool_labels), spec.k),
                                LabelMarginal::uniform(spec.k), shift, spec.seed);
  bundle.epsilon = spec.epsilon;
  return bundle;
}

}  // namespace rlshift
