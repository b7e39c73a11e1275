#include "rlshift/bench.hpp"

#include "rlshift/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>
#include <tuple>

namespace rlshift::bench {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t alpha_code(const std::optional<double>& alpha) {
  return alpha ? std::bit_cast<std::uint64_t>(*alpha) : 0xffffffffffffffffULL;
}

std::vector<double> to_vector(const LabelMarginal& p) {
  return {p.probs().data(), p.probs().data() + p.size()};
}

ordered_json optional_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

}  // namespace

const std::string& task_id(const TaskSource& task) {
  return std::visit([](const auto& t) -> const std::string& { return t.id; }, task);
}

void GridConfig::validate() const {
  if (tasks.empty() || alphas.empty() || seeds.empty() || methods.empty() || corrections.empty()) {
    throw Error(ErrorKind::ConfigError, "tasks, alphas, seeds, methods and corrections must be nonempty");
  }
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    if (!ids.insert(task_id(t)).second) throw Error(ErrorKind::ConfigError, "duplicate task id '" + task_id(t) + "'");
  }
  for (const auto& a : alphas) {
    if (a && !(*a > 0.0)) throw Error(ErrorKind::ConfigError, "alpha values must be positive or null");
  }
  adapt.train.validate();
  adapt.pseudolabel.validate();
}

std::string alpha_label(const std::optional<double>& alpha) {
  return alpha ? io::format_double(*alpha) : "None";
}

std::string estimator_label(const CorrectionFlags& c) {
  return c.reweight ? std::string(estimator_name(c.estimator)) : "none";
}

std::vector<Cell> plan_cells(const GridConfig& cfg) {
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t)
    for (const auto& alpha : cfg.alphas)
      for (std::uint64_t seed : cfg.seeds)
        for (Algorithm m : cfg.methods)
          for (const auto& c : cfg.corrections) cells.push_back({t, alpha, seed, m, c});
  return cells;
}

std::string RunRecord::cell_key() const {
  return task_id + "|" + alpha_label(alpha) + "|" + std::to_string(seed) + "|" + method + "|" +
         corrections.label() + "|" + estimator_label(corrections);
}

std::string cell_key(const GridConfig& cfg, const Cell& cell) {
  RunRecord r;
  r.task_id = task_id(cfg.tasks[cell.task]);
  r.alpha = cell.alpha;
  r.seed = cell.seed;
  r.method = std::string(algorithm_name(cell.method));
  r.corrections = cell.corrections;
  return r.cell_key();
}

std::string record_to_jsonl(const RunRecord& r) {
  ordered_json j;
  j["v"] = 1;
  j["task_id"] = r.task_id;
  j["alpha"] = optional_json(r.alpha);
  j["seed"] = r.seed;
  j["method"] = r.method;
  j["corrections"] = r.corrections.label();
  j["resample"] = r.corrections.resample;
  j["reweight"] = r.corrections.reweight;
  j["estimator"] = estimator_label(r.corrections);
  j["status"] = r.ok ? "ok" : "failed";
  j["error"] = r.ok ? ordered_json(nullptr) : ordered_json(r.error);
  j["target_accuracy"] = r.ok ? ordered_json(r.target_accuracy) : ordered_json(nullptr);
  j["source_val_accuracy"] = r.ok ? ordered_json(r.source_val_accuracy) : ordered_json(nullptr);
  j["marginal_l1_error"] = optional_json(r.marginal_l1_error);
  j["true_marginal"] = r.true_marginal;
  j["estimated_marginal"] = r.estimated_marginal ? ordered_json(*r.estimated_marginal) : ordered_json(nullptr);
  j["wall_time_seconds"] = r.wall_time_seconds;
  return j.dump();
}

RunRecord record_from_jsonl(const std::string& line) {
  try {
    const auto j = ordered_json::parse(line);
    if (j.at("v").get<int>() != 1) throw Error(ErrorKind::ParseError, "unsupported record version");
    RunRecord r;
    r.task_id = j.at("task_id").get<std::string>();
    if (!j.at("alpha").is_null()) r.alpha = j.at("alpha").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.method = j.at("method").get<std::string>();
    r.corrections.resample = j.at("resample").get<bool>();
    r.corrections.reweight = j.at("reweight").get<bool>();
    const auto est = j.at("estimator").get<std::string>();
    if (r.corrections.reweight) r.corrections.estimator = estimator_from_name(est);
    r.ok = j.at("status").get<std::string>() == "ok";
    if (!r.ok) r.error = j.at("error").get<std::string>();
    if (r.ok) {
      r.target_accuracy = j.at("target_accuracy").get<double>();
      r.source_val_accuracy = j.at("source_val_accuracy").get<double>();
    }
    if (!j.at("marginal_l1_error").is_null()) r.marginal_l1_error = j.at("marginal_l1_error").get<double>();
    r.true_marginal = j.at("true_marginal").get<std::vector<double>>();
    if (!j.at("estimated_marginal").is_null()) {
      r.estimated_marginal = j.at("estimated_marginal").get<std::vector<double>>();
    }
    r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("results record: ") + e.what());
  }
}

bool same_outcome(const RunRecord& a, const RunRecord& b) {
  RunRecord x = a;
  RunRecord y = b;
  x.wall_time_seconds = y.wall_time_seconds = 0.0;
  return record_to_jsonl(x) == record_to_jsonl(y);
}

Metrics evaluate(const PredictionMatrix& preds, const Labels& labels,
                 const std::optional<LabelMarginal>& p_hat, const std::optional<LabelMarginal>& p_true) {
  if (preds.rows() != static_cast<Index>(labels.size())) {
    throw Error(ErrorKind::DimensionError, "prediction rows and label count differ");
  }
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "no examples to evaluate");
  const Labels pred = preds.argmax();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  Metrics m;
  m.accuracy = static_cast<double>(hit) / static_cast<double>(labels.size());
  if (p_hat && p_true) m.l1_error = l1_distance(*p_hat, *p_true);
  return m;
}

bool is_baseline(const RunRecord& r) {
  return r.method == algorithm_name(Algorithm::source_only) && !r.corrections.resample && !r.corrections.reweight;
}

double relative_accuracy(const RunRecord& record, const RunRecord& baseline) {
  if (record.task_id != baseline.task_id || record.alpha != baseline.alpha || record.seed != baseline.seed) {
    throw Error(ErrorKind::PairingError, "record " + record.cell_key() + " paired with " + baseline.cell_key());
  }
  if (!is_baseline(baseline)) {
    throw Error(ErrorKind::PairingError, baseline.cell_key() + " is not an uncorrected source_only run");
  }
  return record.target_accuracy - baseline.target_accuracy;
}

TaskBundle build_cell_task(const GridConfig& cfg, const Cell& cell) {
  const TaskSource& task = cfg.tasks[cell.task];
  const std::uint64_t task_hash = fnv1a(task_id(task));
  const std::uint64_t data_seed = derive_seed({cfg.seed, task_hash, cell.seed});
  const ShiftSpec shift{cell.alpha, derive_seed({cfg.seed, task_hash, alpha_code(cell.alpha), cell.seed})};
  if (const auto* synth = std::get_if<SyntheticTask>(&task)) {
    SynthTaskSpec spec = synth->spec;
    spec.seed = data_seed;
    return synth_relaxed_task(spec, shift);
  }
  const auto& ds = std::get<DatasetTask>(task);
  const LabeledSet source = io::read_labeled_csv(ds.source_csv);
  const LabeledSet pool = io::read_labeled_csv(ds.target_csv, source.classes);
  TaskBundle b = make_task(source, pool, pool.marginal(), shift, data_seed);
  return b;
}

RunRecord run_cell(const GridConfig& cfg, const Cell& cell) {
  const auto start = std::chrono::steady_clock::now();
  RunRecord r;
  r.task_id = task_id(cfg.tasks[cell.task]);
  r.alpha = cell.alpha;
  r.seed = cell.seed;
  r.method = std::string(algorithm_name(cell.method));
  r.corrections = cell.corrections;
  try {
    const TaskBundle bundle = build_cell_task(cfg, cell);
    AdaptConfig ac = cfg.adapt;
    ac.model.input_dim = bundle.dim();
    ac.model.classes = bundle.classes();
    // Paired across methods and corrections within a (task, alpha, seed).
    ac.train.seed = derive_seed({cfg.seed, fnv1a(r.task_id), alpha_code(cell.alpha), cell.seed, 0x7472ULL});
    const AdaptResult res = meta_adapt(cell.method, bundle, cell.corrections, ac);
    const Metrics m = evaluate(res.predict(bundle.target_test.features), bundle.target_test.labels, res.p_hat_t,
                               bundle.true_target_marginal);
    r.target_accuracy = m.accuracy;
    r.marginal_l1_error = m.l1_error;
    r.source_val_accuracy = evaluate(res.model.predict(bundle.source_val.features), bundle.source_val.labels).accuracy;
    r.true_marginal = to_vector(bundle.true_target_marginal);
    if (res.p_hat_t) r.estimated_marginal = to_vector(*res.p_hat_t);
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
    r.marginal_l1_error.reset();
    r.estimated_marginal.reset();
  }
  r.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<RunRecord> read_results(const fs::path& path) {
  std::vector<RunRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_jsonl(line));
  }
  return out;
}

GridRun run_grid(const GridConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  const std::vector<Cell> cells = plan_cells(cfg);
  const fs::path results = opt.results_file.empty() ? cfg.output_dir / "results.jsonl" : opt.results_file;
  if (results.has_parent_path()) fs::create_directories(results.parent_path());

  std::map<std::string, RunRecord> done;
  if (opt.resume) {
    for (auto& r : read_results(results)) done.insert_or_assign(r.cell_key(), std::move(r));
  } else {
    std::ofstream(results, std::ios::trunc);
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!done.count(cell_key(cfg, cells[i]))) pending.push_back(i);
  }

  std::vector<std::optional<RunRecord>> fresh(cells.size());
  std::ofstream sink(results, std::ios::app);
  std::mutex sink_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t p = next++; p < pending.size(); p = next++) {
      RunRecord r = run_cell(cfg, cells[pending[p]]);
      std::lock_guard<std::mutex> lock(sink_mutex);
      sink << record_to_jsonl(r) << '\n';
      sink.flush();
      fresh[pending[p]] = std::move(r);
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(pending.size())));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  GridRun run;
  run.executed = pending.size();
  run.skipped = cells.size() - pending.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (fresh[i]) {
      run.records.push_back(std::move(*fresh[i]));
    } else {
      run.records.push_back(done.at(cell_key(cfg, cells[i])));
    }
    if (!run.records.back().ok) ++run.failed;
  }
  return run;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<Summary> aggregate(const std::vector<RunRecord>& records, const std::vector<RunRecord>& baselines) {
  std::map<std::string, const RunRecord*> base_by_key;
  for (const auto& b : baselines) {
    if (!b.ok || !is_baseline(b)) continue;
    base_by_key[b.task_id + "|" + alpha_label(b.alpha) + "|" + std::to_string(b.seed)] = &b;
  }

  // Sort key: None first, then decreasing alpha.
  using GroupKey = std::tuple<int, double, std::string, std::string, std::string>;
  struct Acc {
    Summary summary;
    std::vector<double> rel;
    std::vector<double> l1;
  };
  std::map<GroupKey, Acc> groups;
  for (const auto& r : records) {
    if (!r.ok) continue;
    const auto it = base_by_key.find(r.task_id + "|" + alpha_label(r.alpha) + "|" + std::to_string(r.seed));
    if (it == base_by_key.end()) {
      throw Error(ErrorKind::PairingError, "no source_only baseline for cell " + r.cell_key());
    }
    const GroupKey key{r.alpha ? 1 : 0, r.alpha ? -*r.alpha : 0.0, r.method, r.corrections.label(),
                       estimator_label(r.corrections)};
    Acc& acc = groups[key];
    acc.summary.alpha = r.alpha;
    acc.summary.method = r.method;
    acc.summary.corrections = r.corrections.label();
    acc.summary.estimator = estimator_label(r.corrections);
    acc.rel.push_back(relative_accuracy(r, *it->second));
    if (r.marginal_l1_error) acc.l1.push_back(*r.marginal_l1_error);
  }

  std::vector<Summary> out;
  for (auto& [key, acc] : groups) {
    std::sort(acc.rel.begin(), acc.rel.end());
    std::sort(acc.l1.begin(), acc.l1.end());
    Summary s = acc.summary;
    s.count = acc.rel.size();
    s.mean_rel_acc = std::accumulate(acc.rel.begin(), acc.rel.end(), 0.0) / static_cast<double>(s.count);
    s.median_rel_acc = percentile(acc.rel, 0.5);
    s.q25 = percentile(acc.rel, 0.25);
    s.q75 = percentile(acc.rel, 0.75);
    if (!acc.l1.empty()) {
      s.mean_l1 = std::accumulate(acc.l1.begin(), acc.l1.end(), 0.0) / static_cast<double>(acc.l1.size());
      s.median_l1 = percentile(acc.l1, 0.5);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string summary_csv(const std::vector<Summary>& summaries) {
  auto opt = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const auto& s : summaries) {
    out += alpha_label(s.alpha) + "," + s.method + "," + s.corrections + "," + s.estimator + "," +
           std::to_string(s.count) + "," + io::format_double(s.mean_rel_acc) + "," +
           io::format_double(s.median_rel_acc) + "," + io::format_double(s.q25) + "," +
           io::format_double(s.q75) + "," + opt(s.mean_l1) + "," + opt(s.median_l1) + "\n";
  }
  return out;
}

}  // namespace rlshift::bench
