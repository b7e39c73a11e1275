#include "rlshift/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace rlshift {

namespace {

void require_nonempty(const PredictionMatrix& preds) {
  if (preds.rows() == 0) throw Error(ErrorKind::EmptyInput, "prediction matrix has no rows");
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration from a
// fixed start vector.
double spectral_bound(const MatrixXd& gram) {
  VectorXd v = VectorXd::Ones(gram.rows()).normalized();
  double eig = 0.0;
  for (int it = 0; it < 500; ++it) {
    VectorXd next = gram * v;
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    next /= norm;
    const double prev = eig;
    eig = next.dot(gram * next);
    v = std::move(next);
    if (std::abs(eig - prev) <= 1e-14 * std::max(1.0, eig)) break;
  }
  // Power iteration approaches from below.
  return eig * 1.01;
}

struct ReducedProblem {
  std::vector<Index> active;  // classes with p_s > 0
  MatrixXd design;            // k x |active|, columns of C scaled by 1/p_s
  VectorXd inv_ps;            // 1/p_s on active classes
  VectorXd q0;                // p_s on active classes (w = 1)
};

ReducedProblem reduce(const SoftConfusion& confusion, const LabelMarginal& p_s) {
  ReducedProblem rp;
  for (Index j = 0; j < p_s.size(); ++j) {
    if (p_s[j] > 0.0) rp.active.push_back(j);
  }
  const auto a = static_cast<Index>(rp.active.size());
  rp.design.resize(confusion.matrix.rows(), a);
  rp.inv_ps.resize(a);
  rp.q0.resize(a);
  for (Index c = 0; c < a; ++c) {
    const Index j = rp.active[c];
    rp.inv_ps(c) = 1.0 / p_s[j];
    rp.design.col(c) = confusion.matrix.col(j) * rp.inv_ps(c);
    rp.q0(c) = p_s[j];
  }
  rp.q0 /= rp.q0.sum();
  return rp;
}

double rlls_objective(const ReducedProblem& rp, const VectorXd& q, const VectorXd& mu,
                      double lambda, bool squared) {
  const VectorXd resid = rp.design * q - mu;
  const VectorXd dev = rp.inv_ps.cwiseProduct(q) - VectorXd::Ones(q.size());
  if (squared) return resid.squaredNorm() + lambda * dev.squaredNorm();
  return resid.norm() + lambda * dev.norm();
}

struct PgdOutcome {
  VectorXd q;
  bool converged = false;
  int iterations = 0;
};

PgdOutcome solve_squared(const ReducedProblem& rp, const VectorXd& mu, double lambda,
                         int max_iters, double tol) {
  const MatrixXd gram = rp.design.transpose() * rp.design;
  const VectorXd atmu = rp.design.transpose() * mu;
  const double lipschitz =
      2.0 * (spectral_bound(gram) + lambda * rp.inv_ps.cwiseAbs2().maxCoeff());
  PgdOutcome out{rp.q0, false, 0};
  if (rp.q0.size() == 1) {
    out.converged = true;
    return out;
  }
  if (!(lipschitz > 0.0)) return out;
  const double step = 1.0 / lipschitz;
  for (int it = 1; it <= max_iters; ++it) {
    const VectorXd& q = out.q;
    const VectorXd grad =
        2.0 * (gram * q - atmu) +
        2.0 * lambda * rp.inv_ps.cwiseProduct(rp.inv_ps.cwiseProduct(q) - VectorXd::Ones(q.size()));
    VectorXd next = simplex_projection(q - step * grad);
    const double moved = (next - q).cwiseAbs().maxCoeff();
    out.q = std::move(next);
    out.iterations = it;
    if (moved < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

// Projected subgradient with diminishing steps, warm-started from the squared
// solution; keeps the best iterate seen.
PgdOutcome solve_unsquared(const ReducedProblem& rp, const VectorXd& mu, double lambda,
                           int max_iters, double tol) {
  PgdOutcome warm = solve_squared(rp, mu, lambda * lambda, max_iters, tol);
  PgdOutcome out{warm.q, false, 0};
  if (rp.q0.size() == 1) {
    out.converged = true;
    return out;
  }
  const double scale = std::sqrt(spectral_bound(rp.design.transpose() * rp.design)) +
                       lambda * rp.inv_ps.maxCoeff();
  if (!(scale > 0.0)) return out;
  VectorXd q = out.q;
  double best = rlls_objective(rp, q, mu, lambda, false);
  int stale = 0;
  for (int it = 1; it <= max_iters; ++it) {
    const VectorXd resid = rp.design * q - mu;
    const VectorXd dev = rp.inv_ps.cwiseProduct(q) - VectorXd::Ones(q.size());
    VectorXd grad = VectorXd::Zero(q.size());
    if (resid.norm() > 0.0) grad += rp.design.transpose() * resid / resid.norm();
    if (dev.norm() > 0.0) grad += lambda * rp.inv_ps.cwiseProduct(dev) / dev.norm();
    const double step = 0.1 / (scale * std::sqrt(static_cast<double>(it)));
    VectorXd next = simplex_projection(q - step * grad);
    const double moved = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    out.iterations = it;
    const double obj = rlls_objective(rp, q, mu, lambda, false);
    if (obj < best - tol) {
      best = obj;
      out.q = q;
      stale = 0;
    } else {
      if (obj < best) {
        best = obj;
        out.q = q;
      }
      ++stale;
    }
    if (moved < tol || stale >= 1000) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace

double default_rlls_lambda(std::size_t n_val, bool squared_norms) {
  if (n_val == 0) return 0.0;
  const double rate = 1.0 / std::sqrt(static_cast<double>(n_val));
  return squared_norms ? rate * rate : rate;
}

SoftConfusion soft_confusion(const PredictionMatrix& preds, const Labels& labels) {
  require_nonempty(preds);
  if (preds.rows() != static_cast<Index>(labels.size())) {
    throw Error(ErrorKind::DimensionError, "prediction rows and label count differ");
  }
  const Index k = preds.classes();
  SoftConfusion out;
  out.matrix = MatrixXd::Zero(k, k);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (Index r = 0; r < preds.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k) throw Error(ErrorKind::InvalidInput, "label out of range");
    out.matrix.col(y) += preds.row(r).transpose();
    ++counts[static_cast<std::size_t>(y)];
  }
  out.matrix /= static_cast<double>(preds.rows());
  out.zero_support.resize(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) out.zero_support[j] = counts[j] == 0;
  return out;
}

LabelMarginal mean_prediction(const PredictionMatrix& preds) {
  require_nonempty(preds);
  return LabelMarginal(preds.values().colwise().mean().transpose());
}

LabelMarginal baseline_estimate(const PredictionMatrix& preds_target) {
  return mean_prediction(preds_target);
}

RllsResult rlls_estimate(const SoftConfusion& confusion, const LabelMarginal& mu,
                         const LabelMarginal& p_s, const RllsConfig& cfg) {
  const Index k = p_s.size();
  if (confusion.matrix.rows() != k || confusion.matrix.cols() != k || mu.size() != k) {
    throw Error(ErrorKind::DimensionError, "confusion, mu and p_s must agree in size");
  }
  const double lambda = cfg.lambda.value_or(0.0);
  if (lambda < 0.0) throw Error(ErrorKind::InvalidInput, "lambda must be nonnegative");
  if (cfg.max_iters < 1) throw Error(ErrorKind::InvalidInput, "max_iters must be >= 1");

  std::vector<std::string> diagnostics;
  bool ill = false;
  for (Index j = 0; j < k; ++j) {
    const bool empty_column = confusion.matrix.col(j).isZero(0.0);
    if ((empty_column || p_s[j] == 0.0) && mu[j] > 0.0) {
      ill = true;
      diagnostics.push_back("IllConditioned: class " + std::to_string(j) +
                            " has no source support but receives target prediction mass");
    }
  }

  const ReducedProblem rp = reduce(confusion, p_s);
  const PgdOutcome sol = cfg.squared_norms
                             ? solve_squared(rp, mu.probs(), lambda, cfg.max_iters, cfg.step_tolerance)
                             : solve_unsquared(rp, mu.probs(), lambda, cfg.max_iters, cfg.step_tolerance);
  if (!sol.converged) {
    diagnostics.push_back("NotConverged: RLLS stopped after " + std::to_string(sol.iterations) +
                          " iterations");
  }

  VectorXd w = VectorXd::Zero(k);
  for (std::size_t c = 0; c < rp.active.size(); ++c) {
    w(rp.active[c]) = sol.q(static_cast<Index>(c)) * rp.inv_ps(static_cast<Index>(c));
  }
  RllsResult out{ImportanceWeights(std::move(w), p_s), sol.converged, sol.iterations,
                 rlls_objective(rp, sol.q, mu.probs(), lambda, cfg.squared_norms), ill,
                 std::move(diagnostics)};
  return out;
}

double mlls_log_likelihood(const PredictionMatrix& preds_target, const LabelMarginal& p,
                           const LabelMarginal& p_s) {
  VectorXd ratio = VectorXd::Zero(p.size());
  for (Index y = 0; y < p.size(); ++y) {
    if (p_s[y] > 0.0) ratio(y) = p[y] / p_s[y];
  }
  const VectorXd mix = preds_target.values() * ratio;
  return mix.array().max(1e-300).log().mean();
}

MllsResult mlls_estimate(const PredictionMatrix& preds_target, const LabelMarginal& p_s,
                         const MllsConfig& cfg) {
  require_nonempty(preds_target);
  const Index k = p_s.size();
  if (preds_target.classes() != k) throw Error(ErrorKind::DimensionError, "class count mismatch");
  if (!(cfg.tolerance > 0.0)) throw Error(ErrorKind::InvalidInput, "tolerance must be positive");

  VectorXd support = (p_s.probs().array() > 0.0).cast<double>();
  VectorXd inv_ps = VectorXd::Zero(k);
  for (Index y = 0; y < k; ++y) {
    if (p_s[y] > 0.0) inv_ps(y) = 1.0 / p_s[y];
  }
  VectorXd p = cfg.init ? cfg.init->probs() : p_s.probs();
  if (p.size() != k) throw Error(ErrorKind::DimensionError, "init marginal size mismatch");
  p = p.cwiseProduct(support);
  if (!(p.sum() > 0.0)) throw Error(ErrorKind::DegenerateEstimate, "init has no mass on support");
  p /= p.sum();

  const MatrixXd& f = preds_target.values();
  const double m = static_cast<double>(f.rows());
  MllsResult out{LabelMarginal(p), false, 0, {}, false, {}};
  out.log_likelihood.push_back(mlls_log_likelihood(preds_target, out.marginal, p_s));

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const VectorXd ratio = p.cwiseProduct(inv_ps);
    VectorXd mix = f * ratio;
    if ((mix.array() < cfg.denominator_floor).any()) {
      out.floored = true;
      mix = mix.cwiseMax(cfg.denominator_floor);
    }
    // posterior(i, y) = ratio_y f_y(x_i) / mix_i
    const MatrixXd posterior =
        (f.array().rowwise() * ratio.transpose().array()).colwise() / mix.array();
    VectorXd next = posterior.colwise().sum().transpose() / m;
    next /= next.sum();
    const double change = (next - p).lpNorm<1>();
    const LabelMarginal candidate(next);
    const double ll = mlls_log_likelihood(preds_target, candidate, p_s);
    out.iterations = it;
    // An exact EM step cannot lower the likelihood; a lower value is rounding at the fixed point.
    if (ll < out.log_likelihood.back()) {
      out.converged = true;
      break;
    }
    p = std::move(next);
    out.marginal = candidate;
    out.log_likelihood.push_back(ll);
    if (change < cfg.tolerance) {
      out.converged = true;
      break;
    }
  }
  if (out.floored) {
    out.diagnostics.push_back("Floored: a target prediction row had near-zero likelihood");
  }
  if (!out.converged) {
    out.diagnostics.push_back("NotConverged: MLLS stopped after " + std::to_string(out.iterations) +
                              " iterations");
  }
  return out;
}

EstimatorKind estimator_from_name(std::string_view name) {
  if (name == "rlls") return EstimatorKind::rlls;
  if (name == "mlls") return EstimatorKind::mlls;
  if (name == "baseline") return EstimatorKind::baseline;
  throw Error(ErrorKind::InvalidInput, "unknown estimator '" + std::string(name) + "'");
}

std::string_view estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::rlls: return "rlls";
    case EstimatorKind::mlls: return "mlls";
    case EstimatorKind::baseline: return "baseline";
  }
  return "unknown";
}

namespace {

ImportanceWeights ratio_weights(const LabelMarginal& estimate, const LabelMarginal& reference) {
  VectorXd w = VectorXd::Zero(reference.size());
  for (Index y = 0; y < reference.size(); ++y) {
    if (reference[y] > 0.0) w(y) = estimate[y] / reference[y];
  }
  return ImportanceWeights(std::move(w), reference);
}

LabelMarginal reference_marginal(const EstimationInputs& in) {
  if (in.train_marginal) return *in.train_marginal;
  if (in.source_val_labels && in.target_preds) {
    return LabelMarginal::from_labels(*in.source_val_labels, in.target_preds->classes());
  }
  return LabelMarginal::uniform(in.target_preds->classes());
}

}  // namespace

EstimateResult run_rlls(const EstimationInputs& in, const EstimatorOptions& opt) {
  if (!in.source_val_preds || !in.source_val_labels || !in.target_preds) {
    throw Error(ErrorKind::InvalidInput, "rlls needs labeled source predictions and target predictions");
  }
  const SoftConfusion confusion = soft_confusion(*in.source_val_preds, *in.source_val_labels);
  const LabelMarginal p_s(confusion.column_marginal());
  const LabelMarginal mu = mean_prediction(*in.target_preds);
  RllsConfig cfg = opt.rlls;
  if (!cfg.lambda) {
    cfg.lambda = default_rlls_lambda(in.source_val_labels->size(), cfg.squared_norms);
  }
  RllsResult r = rlls_estimate(confusion, mu, p_s, cfg);
  LabelMarginal marginal = weights_to_marginal(r.weights, p_s);
  return {std::move(marginal), std::move(r.weights), std::move(r.diagnostics)};
}

EstimateResult run_mlls(const EstimationInputs& in, const EstimatorOptions& opt) {
  if (!in.target_preds) throw Error(ErrorKind::InvalidInput, "mlls needs target predictions");
  const LabelMarginal p_s = reference_marginal(in);
  MllsResult r = mlls_estimate(*in.target_preds, p_s, opt.mlls);
  ImportanceWeights w = ratio_weights(r.marginal, p_s);
  return {std::move(r.marginal), std::move(w), std::move(r.diagnostics)};
}

EstimateResult run_baseline(const EstimationInputs& in, const EstimatorOptions&) {
  if (!in.target_preds) throw Error(ErrorKind::InvalidInput, "baseline needs target predictions");
  LabelMarginal marginal = baseline_estimate(*in.target_preds);
  ImportanceWeights w = ratio_weights(marginal, reference_marginal(in));
  return {std::move(marginal), std::move(w), {}};
}

EstimatorFn lookup_estimator(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::rlls: return &run_rlls;
    case EstimatorKind::mlls: return &run_mlls;
    case EstimatorKind::baseline: return &run_baseline;
  }
  throw Error(ErrorKind::InvalidInput, "unknown estimator kind");
}

}  // namespace rlshift
