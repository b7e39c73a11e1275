#include "rlshift/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rlshift {

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw Error(ErrorKind::InvalidInput, "epochs and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidInput, "learning_rate must be positive");
  if (!(l2 >= 0.0)) throw Error(ErrorKind::InvalidInput, "l2 must be nonnegative");
}

void PseudoLabelConfig::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidInput, "tau must be positive");
  if (!(lambda_max >= 0.0)) throw Error(ErrorKind::InvalidInput, "lambda_max must be nonnegative");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidInput, "ramp_fraction must lie in (0, 1]");
  }
}

double PseudoLabelConfig::weight_at(long step, long total_steps) const {
  const double ramp_steps = ramp_fraction * static_cast<double>(total_steps);
  if (ramp_steps <= 0.0) return lambda_max;
  return lambda_max * std::min(1.0, static_cast<double>(step) / ramp_steps);
}

std::string CorrectionFlags::label() const {
  if (resample && reweight) return "RS+RW";
  if (resample) return "RS";
  if (reweight) return "RW";
  return "none";
}

Algorithm algorithm_from_name(std::string_view name) {
  if (name == "source_only") return Algorithm::source_only;
  if (name == "pseudolabel") return Algorithm::pseudolabel;
  if (name == "iw_erm") return Algorithm::iw_erm;
  throw Error(ErrorKind::InvalidInput, "unknown algorithm '" + std::string(name) + "'");
}

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::source_only: return "source_only";
    case Algorithm::pseudolabel: return "pseudolabel";
    case Algorithm::iw_erm: return "iw_erm";
  }
  return "unknown";
}

IndexList class_balanced_indices(const Labels& labels, std::size_t size, std::uint64_t seed) {
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "no labels to balance");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<IndexList> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw Error(ErrorKind::InvalidInput, "negative label");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<std::size_t> nonempty;
  for (std::size_t y = 0; y < by_class.size(); ++y) {
    if (!by_class[y].empty()) nonempty.push_back(y);
  }
  // Equal shares; the remainder goes to the lowest class indices.
  const std::size_t share = size / nonempty.size();
  const std::size_t extra = size % nonempty.size();

  RngStream rng(seed, stream::kSourceBalance);
  IndexList out;
  out.reserve(size);
  for (std::size_t c = 0; c < nonempty.size(); ++c) {
    const IndexList& members = by_class[nonempty[c]];
    const std::size_t count = share + (c < extra ? 1 : 0);
    for (std::size_t d = 0; d < count; ++d) out.push_back(members[rng.index(members.size())]);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

ReweightResult reweight_predictions(const PredictionMatrix& preds, const LabelMarginal& p_hat_t,
                                    const LabelMarginal& p_train) {
  const Index k = preds.classes();
  if (p_hat_t.size() != k || p_train.size() != k) {
    throw Error(ErrorKind::DimensionError, "marginals and predictions differ in class count");
  }
  if ((p_train.probs().array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidInput, "training marginal must be strictly positive");
  }
  const VectorXd ratio = p_hat_t.probs().cwiseQuotient(p_train.probs());
  MatrixXd out = preds.values().array().rowwise() * ratio.transpose().array();
  std::vector<Index> unchanged;
  for (Index i = 0; i < out.rows(); ++i) {
    const double mass = out.row(i).sum();
    if (mass > 0.0) {
      out.row(i) /= mass;
    } else {
      out.row(i) = preds.row(i);
      unchanged.push_back(i);
    }
  }
  return {PredictionMatrix(std::move(out)), std::move(unchanged)};
}

namespace {

double accuracy(const Model& model, const LabeledSet& set) {
  if (set.size() == 0) return 0.0;
  const Labels pred = model.predict(set.features).argmax();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == set.labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

IndexList shuffled_range(std::size_t n, std::uint64_t seed, std::uint64_t stream_id) {
  IndexList perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng(seed, stream_id);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

MatrixXd gather_rows(const MatrixXd& x, const IndexList& idx, std::size_t begin, std::size_t end) {
  MatrixXd out(static_cast<Index>(end - begin), x.cols());
  for (std::size_t r = begin; r < end; ++r) out.row(static_cast<Index>(r - begin)) = x.row(static_cast<Index>(idx[r]));
  return out;
}

std::size_t count_nonempty(const Labels& labels, Index k) {
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (int y : labels) seen[static_cast<std::size_t>(y)] = true;
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
}

// How the per-epoch source loss is weighted, decided at epoch start.
struct EpochWeights {
  VectorXd per_class;  // w(y); empty means unweighted
  LabelMarginal effective = LabelMarginal::uniform(2);
};

struct LoopOptions {
  const MatrixXd* target = nullptr;       // unlabeled target features
  const PseudoLabelConfig* pl = nullptr;  // set for pseudolabel training
  bool resample = false;
  bool importance_weighting = false;
  const VectorXd* fixed_class_weights = nullptr;
};

struct TrainOutcome {
  Model model;
  LabelMarginal effective_marginal = LabelMarginal::uniform(2);
  std::vector<std::string> warnings;
};

// Unlabeled objective term: mean masked cross-entropy of target rows against
// their own argmax labels. Returns the number of rows above the threshold.
Index add_pseudo_term(const ModelSpec& spec, const VectorXd& params, const MatrixXd& xt, double weight,
                      double tau, VectorXd* grad, double* loss) {
  const PredictionMatrix p(softmax_rows(model_logits(spec, params, xt)));
  const Labels pseudo = p.argmax();
  VectorXd coeffs = VectorXd::Zero(xt.rows());
  Index fired = 0;
  const double per_row = weight / static_cast<double>(xt.rows());
  for (Index i = 0; i < xt.rows(); ++i) {
    if (p.values()(i, pseudo[static_cast<std::size_t>(i)]) >= tau) {
      coeffs(i) = per_row;
      ++fired;
    }
  }
  if (fired == 0) return 0;
  VectorXd scratch = VectorXd::Zero(params.size());
  const double l = accumulate_cross_entropy(spec, params, xt, pseudo, coeffs, grad ? *grad : scratch);
  if (loss) *loss += l;
  return fired;
}

TrainOutcome train_loop(const ModelSpec& spec, const LabeledSet& train, const LabeledSet& val,
                        const TrainConfig& cfg, const LoopOptions& opt) {
  spec.validate();
  cfg.validate();
  if (opt.pl) opt.pl->validate();
  if (train.size() == 0) throw Error(ErrorKind::EmptyInput, "empty training set");
  if (train.dim() != spec.input_dim || train.classes != spec.classes) {
    throw Error(ErrorKind::DimensionError, "training data does not match the model spec");
  }
  if (opt.target && opt.target->rows() == 0) throw Error(ErrorKind::EmptyInput, "empty target set");
  const Index k = spec.classes;
  const auto n = static_cast<std::size_t>(train.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;
  const LabelMarginal source_marginal = train.marginal();

  TrainOutcome out;
  out.model.spec = spec;
  out.model.parameters = init_parameters(spec, cfg.seed);
  VectorXd best = out.model.parameters;
  double best_acc = -1.0;
  LabelMarginal best_marginal = source_marginal;
  double lr = cfg.learning_rate;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch)});
    VectorXd& theta = out.model.parameters;

    // Source order, balanced when resampling.
    const IndexList source_order = opt.resample
                                       ? class_balanced_indices(train.labels, n, derive_seed({epoch_seed, stream::kSourceBalance}))
                                       : shuffled_range(n, epoch_seed, stream::kSourceOrder);

    // Steps 3-4: pseudo-labels at epoch start, target pseudo-balancing.
    IndexList target_order;
    if (opt.target) {
      const auto m = static_cast<std::size_t>(opt.target->rows());
      if (opt.resample) {
        const Labels pseudo = PredictionMatrix(softmax_rows(model_logits(spec, theta, *opt.target))).argmax();
        const std::size_t present = count_nonempty(pseudo, k);
        if (present < static_cast<std::size_t>(k)) {
          out.warnings.push_back("epoch " + std::to_string(epoch) + ": pseudo-labels cover " +
                                 std::to_string(present) + " of " + std::to_string(k) + " classes");
        }
        target_order = class_balanced_indices(pseudo, m, derive_seed({epoch_seed, stream::kTargetBalance}));
      } else {
        target_order = shuffled_range(m, epoch_seed, stream::kTargetOrder);
      }
    }

    // Per-class source weights for this epoch.
    EpochWeights ew;
    ew.effective = opt.resample ? LabelMarginal::uniform(k) : source_marginal;
    if (opt.fixed_class_weights) {
      ew.per_class = *opt.fixed_class_weights;
    } else if (opt.importance_weighting && epoch > 0) {
      const PredictionMatrix val_preds = out.model.predict(val.features);
      const PredictionMatrix tgt_preds = out.model.predict(*opt.target);
      EstimationInputs in{&val_preds, &val.labels, &tgt_preds, nullptr};
      try {
        const EstimateResult est = run_rlls(in, {});
        const LabelMarginal p_hat = floor_marginal(est.marginal, 1e-6);
        ew.per_class = p_hat.probs().cwiseQuotient(ew.effective.probs().cwiseMax(1e-12));
        ew.effective = p_hat;
      } catch (const Error& e) {
        out.warnings.push_back("epoch " + std::to_string(epoch) + ": weight estimate failed: " + e.what());
      }
    }
    if (opt.importance_weighting && epoch == 0) ew.per_class = VectorXd::Ones(k);

    auto source_coeffs = [&](const Labels& ys, std::size_t count) {
      VectorXd c = VectorXd::Constant(static_cast<Index>(count), 1.0 / static_cast<double>(count));
      if (ew.per_class.size() > 0) {
        for (std::size_t i = 0; i < count; ++i) c(static_cast<Index>(i)) *= ew.per_class(ys[i]);
      }
      return c;
    };

    // Epoch objective for the safeguard, over the epoch's data and the
    // end-of-epoch unlabeled weight.
    const double lambda_end = opt.pl ? opt.pl->weight_at(step + steps_per_epoch - 1, total_steps) : 0.0;
    auto objective = [&](const VectorXd& params) {
      const LabeledSet epoch_set = train.subset(source_order);
      VectorXd scratch = VectorXd::Zero(params.size());
      double j = accumulate_cross_entropy(spec, params, epoch_set.features, epoch_set.labels,
                                          source_coeffs(epoch_set.labels, source_order.size()), scratch);
      if (opt.pl && lambda_end > 0.0) {
        add_pseudo_term(spec, params, gather_rows(*opt.target, target_order, 0, target_order.size()),
                        lambda_end, opt.pl->tau, nullptr, &j);
      }
      return j + 0.5 * cfg.l2 * params.squaredNorm();
    };

    const VectorXd start = theta;
    const double before = cfg.safeguard ? objective(start) : 0.0;
    std::size_t target_cursor = 0;
    for (std::size_t b = 0; b < n; b += batch, ++step) {
      const std::size_t e = std::min(n, b + batch);
      const MatrixXd xb = gather_rows(train.features, source_order, b, e);
      Labels yb(e - b);
      for (std::size_t r = b; r < e; ++r) yb[r - b] = train.labels[source_order[r]];

      VectorXd grad = VectorXd::Zero(theta.size());
      double loss = accumulate_cross_entropy(spec, theta, xb, yb, source_coeffs(yb, e - b), grad);

      if (opt.pl) {
        const double lambda_t = opt.pl->weight_at(step, total_steps);
        if (lambda_t > 0.0) {
          IndexList tb(batch);
          for (auto& t : tb) {
            t = target_order[target_cursor];
            target_cursor = (target_cursor + 1) % target_order.size();
          }
          add_pseudo_term(spec, theta, gather_rows(*opt.target, tb, 0, batch), lambda_t, opt.pl->tau,
                          &grad, &loss);
        }
      }
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::DivergedError, "non-finite loss at epoch " + std::to_string(epoch));
      }
      if (cfg.l2 > 0.0) grad += cfg.l2 * theta;
      theta -= lr * grad;
    }

    if (cfg.safeguard) {
      const double after = objective(theta);
      if (!std::isfinite(after)) {
        throw Error(ErrorKind::DivergedError, "non-finite loss at epoch " + std::to_string(epoch));
      }
      if (after > before) {
        theta = start;
        lr *= 0.5;
      }
    }

    const double acc = accuracy(out.model, val);
    out.model.training_log.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = theta;
      best_marginal = ew.effective;
      out.model.best_epoch = epoch;
    }
    out.effective_marginal = ew.effective;
  }
  if (cfg.early_stop_on_source_val) {
    out.model.parameters = best;
    out.effective_marginal = best_marginal;
  } else {
    out.model.best_epoch = cfg.epochs - 1;
  }
  return out;
}

}  // namespace

Model train_erm(const ModelSpec& spec, const LabeledSet& train, const LabeledSet& val,
                const TrainConfig& cfg, const VectorXd* class_weights) {
  if (class_weights && class_weights->size() != spec.classes) {
    throw Error(ErrorKind::DimensionError, "class weight count differs from class count");
  }
  LoopOptions opt;
  opt.fixed_class_weights = class_weights;
  return train_loop(spec, train, val, cfg, opt).model;
}

Model pseudolabel_train(const ModelSpec& spec, const LabeledSet& source, const LabeledSet& source_val,
                        const MatrixXd& target_unlabeled, const TrainConfig& cfg,
                        const PseudoLabelConfig& pl, const CorrectionFlags& corrections) {
  LoopOptions opt;
  opt.target = &target_unlabeled;
  opt.pl = &pl;
  opt.resample = corrections.resample;
  return train_loop(spec, source, source_val, cfg, opt).model;
}

Model iw_erm_train(const ModelSpec& spec, const LabeledSet& source, const LabeledSet& source_val,
                   const MatrixXd& target_unlabeled, const TrainConfig& cfg,
                   const CorrectionFlags& corrections) {
  LoopOptions opt;
  opt.target = &target_unlabeled;
  opt.importance_weighting = true;
  opt.resample = corrections.resample;
  return train_loop(spec, source, source_val, cfg, opt).model;
}

PredictionMatrix AdaptResult::predict(const MatrixXd& x) const {
  PredictionMatrix raw = model.predict(x);
  if (!reweighted || !reweight_marginal) return raw;
  return reweight_predictions(raw, *reweight_marginal, train_marginal).predictions;
}

AdaptResult meta_adapt(Algorithm algorithm, const TaskBundle& bundle, const CorrectionFlags& corrections,
                       const AdaptConfig& cfg) {
  LoopOptions opt;
  opt.resample = corrections.resample;
  switch (algorithm) {
    case Algorithm::source_only:
      break;
    case Algorithm::pseudolabel:
      opt.target = &bundle.target_train.features;
      opt.pl = &cfg.pseudolabel;
      break;
    case Algorithm::iw_erm:
      opt.target = &bundle.target_train.features;
      opt.importance_weighting = true;
      break;
  }
  TrainOutcome trained = train_loop(cfg.model, bundle.source_train, bundle.source_val, cfg.train, opt);

  AdaptResult result;
  result.model = std::move(trained.model);
  result.train_marginal = trained.effective_marginal;
  result.warnings = std::move(trained.warnings);
  if (!corrections.reweight) return result;

  // Held-out source for the confusion matrix, held-out target for mu.
  try {
    const PredictionMatrix val_preds = result.model.predict(bundle.source_val.features);
    const PredictionMatrix tgt_preds = result.model.predict(bundle.target_test.features);
    EstimationInputs in{&val_preds, &bundle.source_val.labels, &tgt_preds, &result.train_marginal};
    EstimateResult est = estimate_marginal(corrections.estimator, in, cfg.estimator);
    result.diagnostics = std::move(est.diagnostics);
    result.p_hat_t = est.marginal;
    result.reweight_marginal = floor_marginal(est.marginal, cfg.marginal_floor);
    result.train_marginal = floor_marginal(result.train_marginal, 1e-12);
    result.reweighted = true;
  } catch (const Error& e) {
    result.diagnostics.push_back(e.what());
  }
  return result;
}

}  // namespace rlshift
