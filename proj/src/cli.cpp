#include "rlshift/cli.hpp"

#include "rlshift/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <set>
#include <sstream>

namespace rlshift::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_fail(const std::string& what) { throw Error(ErrorKind::ConfigError, what); }

void allow_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) config_fail(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) config_fail("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& into, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const json::exception&) {
    config_fail("key '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

bench::TaskSource parse_task(const json& t, std::size_t i, const fs::path& base) {
  const std::string where = "tasks[" + std::to_string(i) + "]";
  if (!t.is_object()) config_fail(where + " must be an object");
  std::string type = "synthetic";
  read(t, "type", type, where);
  std::string id;
  read(t, "id", id, where);
  if (id.empty()) config_fail(where + " needs a nonempty 'id'");
  if (type == "synthetic") {
    allow_keys(t, where, {"id", "type", "k", "d", "epsilon", "n_source", "n_target_pool", "class_separation"});
    bench::SyntheticTask task{id, {}};
    read(t, "k", task.spec.k, where);
    read(t, "d", task.spec.d, where);
    read(t, "epsilon", task.spec.epsilon, where);
    read(t, "n_source", task.spec.n_source, where);
    read(t, "n_target_pool", task.spec.n_target_pool, where);
    read(t, "class_separation", task.spec.class_separation, where);
    try {
      GaussianTask::build(task.spec);
    } catch (const Error& e) {
      config_fail(where + ": " + e.what());
    }
    return task;
  }
  if (type == "dataset") {
    allow_keys(t, where, {"id", "type", "source", "target"});
    std::string source, target;
    read(t, "source", source, where);
    read(t, "target", target, where);
    if (source.empty() || target.empty()) config_fail(where + " needs 'source' and 'target' CSV paths");
    return bench::DatasetTask{id, base / source, base / target};
  }
  config_fail(where + " has unknown type '" + type + "'");
}

json marginal_json(const VectorXd& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

}  // namespace

bench::GridConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    config_fail(std::string("invalid JSON: ") + e.what());
  }
  allow_keys(root, "config", {"seed", "output_dir", "tasks", "alphas", "seeds", "methods", "corrections",
                              "estimators", "model", "train", "pseudolabel", "rlls", "mlls"});
  bench::GridConfig cfg;
  read(root, "seed", cfg.seed, "config");
  std::string out_dir = "results";
  read(root, "output_dir", out_dir, "config");
  cfg.output_dir = base_dir / out_dir;

  if (!root.contains("tasks") || !root["tasks"].is_array()) config_fail("config needs a 'tasks' array");
  for (std::size_t i = 0; i < root["tasks"].size(); ++i) cfg.tasks.push_back(parse_task(root["tasks"][i], i, base_dir));

  if (root.contains("alphas")) {
    if (!root["alphas"].is_array()) config_fail("'alphas' must be an array");
    cfg.alphas.clear();
    for (const auto& a : root["alphas"]) {
      if (a.is_null()) {
        cfg.alphas.emplace_back(std::nullopt);
      } else if (a.is_number()) {
        cfg.alphas.emplace_back(a.get<double>());
      } else {
        config_fail("'alphas' entries must be numbers or null");
      }
    }
  }
  read(root, "seeds", cfg.seeds, "config");

  if (root.contains("methods")) {
    std::vector<std::string> names;
    read(root, "methods", names, "config");
    cfg.methods.clear();
    for (const auto& n : names) {
      try {
        cfg.methods.push_back(algorithm_from_name(n));
      } catch (const Error&) {
        config_fail("unknown method '" + n + "' in methods");
      }
    }
  }

  std::vector<std::string> estimators{"rlls"};
  read(root, "estimators", estimators, "config");
  if (estimators.empty()) config_fail("'estimators' must be nonempty");
  for (const auto& e : estimators) {
    try {
      estimator_from_name(e);
    } catch (const Error&) {
      config_fail("unknown estimator '" + e + "' in estimators");
    }
  }
  if (root.contains("corrections")) {
    if (!root["corrections"].is_array()) config_fail("'corrections' must be an array");
    cfg.corrections.clear();
    for (std::size_t i = 0; i < root["corrections"].size(); ++i) {
      const json& c = root["corrections"][i];
      const std::string where = "corrections[" + std::to_string(i) + "]";
      allow_keys(c, where, {"resample", "reweight", "estimator"});
      CorrectionFlags flags;
      read(c, "resample", flags.resample, where);
      read(c, "reweight", flags.reweight, where);
      if (!flags.reweight) {
        cfg.corrections.push_back(flags);
        continue;
      }
      std::vector<std::string> names = estimators;
      if (c.contains("estimator")) {
        names = {""};
        read(c, "estimator", names[0], where);
      }
      for (const auto& n : names) {
        try {
          flags.estimator = estimator_from_name(n);
        } catch (const Error&) {
          config_fail("unknown estimator '" + n + "' in " + where);
        }
        cfg.corrections.push_back(flags);
      }
    }
  }

  if (root.contains("model")) {
    const json& m = root["model"];
    allow_keys(m, "model", {"kind", "hidden_units"});
    std::string kind = "logistic";
    read(m, "kind", kind, "model");
    try {
      cfg.adapt.model.kind = model_kind_from_name(kind);
    } catch (const Error&) {
      config_fail("unknown model kind '" + kind + "'");
    }
    read(m, "hidden_units", cfg.adapt.model.hidden_units, "model");
    if (cfg.adapt.model.kind == ModelKind::mlp && cfg.adapt.model.hidden_units < 1) {
      config_fail("model.hidden_units must be >= 1 for mlp");
    }
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    allow_keys(t, "train", {"epochs", "batch_size", "learning_rate", "l2", "early_stop_on_source_val", "safeguard"});
    auto& tc = cfg.adapt.train;
    read(t, "epochs", tc.epochs, "train");
    read(t, "batch_size", tc.batch_size, "train");
    read(t, "learning_rate", tc.learning_rate, "train");
    read(t, "l2", tc.l2, "train");
    read(t, "early_stop_on_source_val", tc.early_stop_on_source_val, "train");
    read(t, "safeguard", tc.safeguard, "train");
  }
  if (root.contains("pseudolabel")) {
    const json& p = root["pseudolabel"];
    allow_keys(p, "pseudolabel", {"tau", "lambda_max", "ramp_fraction"});
    read(p, "tau", cfg.adapt.pseudolabel.tau, "pseudolabel");
    read(p, "lambda_max", cfg.adapt.pseudolabel.lambda_max, "pseudolabel");
    read(p, "ramp_fraction", cfg.adapt.pseudolabel.ramp_fraction, "pseudolabel");
  }
  if (root.contains("rlls")) {
    const json& r = root["rlls"];
    allow_keys(r, "rlls", {"lambda", "squared_norms", "max_iters", "step_tolerance"});
    auto& rc = cfg.adapt.estimator.rlls;
    if (r.contains("lambda") && !r["lambda"].is_null()) {
      double lambda = 0.0;
      read(r, "lambda", lambda, "rlls");
      rc.lambda = lambda;
    }
    read(r, "squared_norms", rc.squared_norms, "rlls");
    read(r, "max_iters", rc.max_iters, "rlls");
    read(r, "step_tolerance", rc.step_tolerance, "rlls");
  }
  if (root.contains("mlls")) {
    const json& m = root["mlls"];
    allow_keys(m, "mlls", {"tolerance", "max_iters"});
    read(m, "tolerance", cfg.adapt.estimator.mlls.tolerance, "mlls");
    read(m, "max_iters", cfg.adapt.estimator.mlls.max_iters, "mlls");
  }

  try {
    cfg.validate();
  } catch (const Error& e) {
    config_fail(e.what());
  }
  const bool has_source_only =
      std::find(cfg.methods.begin(), cfg.methods.end(), Algorithm::source_only) != cfg.methods.end();
  const bool has_none = std::find(cfg.corrections.begin(), cfg.corrections.end(), CorrectionFlags{}) !=
                        cfg.corrections.end();
  if (!has_source_only || !has_none) {
    config_fail("the grid must include method 'source_only' with no corrections (the relative-accuracy baseline)");
  }
  return cfg;
}

bench::GridConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_fail("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

int command_run(const fs::path& config_path, const RunFlags& flags, std::ostream& out, std::ostream& err) {
  bench::GridConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  const auto cells = bench::plan_cells(cfg);
  if (flags.dry_run) {
    for (const auto& c : cells) out << bench::cell_key(cfg, c) << "\n";
    out << cells.size() << " cells\n";
    return kExitOk;
  }
  bench::RunOptions opt;
  opt.jobs = flags.jobs;
  opt.resume = flags.resume;
  const bench::GridRun run = bench::run_grid(cfg, opt);
  out << "executed " << run.executed << " cells, skipped " << run.skipped << ", failed " << run.failed << "\n";
  for (const auto& r : run.records) {
    if (!r.ok) err << "cell " << r.cell_key() << " failed: " << r.error << "\n";
  }
  try {
    std::vector<bench::RunRecord> baselines;
    for (const auto& r : run.records) {
      if (bench::is_baseline(r)) baselines.push_back(r);
    }
    const auto summary = bench::aggregate(run.records, baselines);
    std::ofstream(cfg.output_dir / "summary.csv", std::ios::binary | std::ios::trunc) << bench::summary_csv(summary);
    out << "wrote " << (cfg.output_dir / "results.jsonl").string() << " and "
        << (cfg.output_dir / "summary.csv").string() << "\n";
  } catch (const Error& e) {
    err << "aggregation failed: " << e.what() << "\n";
    return kExitPartialFailure;
  }
  return run.failed == 0 ? kExitOk : kExitPartialFailure;
}

int command_estimate(const EstimateFlags& flags, std::ostream& out, std::ostream& err) {
  EstimatorKind kind;
  io::PredictionDump source{PredictionMatrix(MatrixXd(0, 0)), std::nullopt};
  io::PredictionDump target{PredictionMatrix(MatrixXd(0, 0)), std::nullopt};
  std::optional<LabelMarginal> reference;
  try {
    kind = estimator_from_name(flags.estimator);
    source = io::ingest_predictions(flags.source_preds, flags.normalize);
    target = io::ingest_predictions(flags.target_preds, flags.normalize);
    if (!source.labels) throw Error(ErrorKind::ParseError, "source dump needs a 'y' column");
    if (source.predictions.classes() != target.predictions.classes()) {
      throw Error(ErrorKind::DimensionError, "source and target dumps disagree on class count");
    }
    if (flags.p_source) {
      reference = LabelMarginal(Eigen::Map<const VectorXd>(flags.p_source->data(),
                                                           static_cast<Index>(flags.p_source->size())));
      if (reference->size() != target.predictions.classes()) {
        throw Error(ErrorKind::DimensionError, "--p-source length differs from class count");
      }
    } else {
      reference = LabelMarginal::from_labels(*source.labels, target.predictions.classes());
    }
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }

  EstimatorOptions opt;
  opt.rlls.lambda = flags.lambda;
  EstimationInputs in{&source.predictions, &*source.labels, &target.predictions, &*reference};
  try {
    const EstimateResult est = estimate_marginal(kind, in, opt);
    VectorXd w = VectorXd::Zero(reference->size());
    for (Index y = 0; y < w.size(); ++y) {
      if ((*reference)[y] > 0.0) w(y) = est.marginal[y] / (*reference)[y];
    }
    json doc = {{"estimator", flags.estimator},
                {"target_marginal", marginal_json(est.marginal.probs())},
                {"importance_weights", marginal_json(w)},
                {"reference_marginal", marginal_json(reference->probs())},
                {"diagnostics", est.diagnostics}};
    out << doc.dump(2) << "\n";
    if (!est.diagnostics.empty()) {
      for (const auto& d : est.diagnostics) err << d << "\n";
      return kExitDiagnostic;
    }
    return kExitOk;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitDiagnostic;
  }
}

int command_synth(const SynthFlags& flags, std::ostream& out, std::ostream& err) {
  try {
    const TaskBundle bundle = synth_relaxed_task(flags.spec, ShiftSpec{flags.alpha, flags.spec.seed});
    io::save_bundle(flags.out_dir, bundle);
    out << "wrote task bundle to " << flags.out_dir.string() << " (" << bundle.source_train.size() << " + "
        << bundle.source_val.size() << " source, " << bundle.target_train.size() << " + "
        << bundle.target_test.size() << " target)\n";
    return kExitOk;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }
}

int command_adapt(const AdaptFlags& flags, std::ostream& out, std::ostream& err) {
  TaskBundle bundle;
  Algorithm algorithm;
  try {
    bundle = io::load_bundle(flags.bundle_dir);
    algorithm = algorithm_from_name(flags.method);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }
  AdaptConfig cfg = flags.config;
  cfg.model.input_dim = bundle.dim();
  cfg.model.classes = bundle.classes();
  try {
    const AdaptResult res = meta_adapt(algorithm, bundle, flags.corrections, cfg);
    const bench::Metrics m = bench::evaluate(res.predict(bundle.target_test.features), bundle.target_test.labels,
                                             res.p_hat_t, bundle.true_target_marginal);
    json doc = {{"method", flags.method},
                {"corrections", flags.corrections.label()},
                {"target_accuracy", m.accuracy},
                {"source_val_accuracy",
                 bench::evaluate(res.model.predict(bundle.source_val.features), bundle.source_val.labels).accuracy},
                {"true_marginal", marginal_json(bundle.true_target_marginal.probs())},
                {"estimated_marginal", res.p_hat_t ? marginal_json(res.p_hat_t->probs()) : json(nullptr)},
                {"marginal_l1_error", m.l1_error ? json(*m.l1_error) : json(nullptr)},
                {"diagnostics", res.diagnostics},
                {"warnings", res.warnings}};
    out << doc.dump(2) << "\n";
    if (!flags.model_out.empty()) io::save_model(flags.model_out, res.model);
    return res.diagnostics.empty() ? kExitOk : kExitDiagnostic;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitPartialFailure;
  }
}

int command_report(const ReportFlags& flags, std::ostream& out, std::ostream& err) {
  try {
    if (!fs::exists(flags.results)) throw Error(ErrorKind::InvalidInput, "no results file " + flags.results.string());
    const auto records = bench::read_results(flags.results);
    std::vector<bench::RunRecord> baselines;
    for (const auto& r : records) {
      if (bench::is_baseline(r)) baselines.push_back(r);
    }
    const std::string csv = bench::summary_csv(bench::aggregate(records, baselines));
    if (flags.summary_out.empty()) {
      out << csv;
    } else {
      std::ofstream(flags.summary_out, std::ios::binary | std::ios::trunc) << csv;
      out << "wrote " << flags.summary_out.string() << "\n";
    }
    return kExitOk;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace rlshift::cli
