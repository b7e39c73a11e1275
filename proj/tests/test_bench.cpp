#include "rlshift/bench.hpp"
#include "rlshift/io.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace rlshift;
using namespace rlshift::bench;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("rlshift_test_bench_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

GridConfig tiny_grid(const fs::path& out) {
  GridConfig cfg;
  SynthTaskSpec spec;
  spec.n_source = 300;
  spec.n_target_pool = 300;
  spec.class_separation = 3.0;
  cfg.tasks.push_back(SyntheticTask{"tiny", spec});
  cfg.methods = {Algorithm::source_only, Algorithm::pseudolabel};
  cfg.corrections = {CorrectionFlags{}, CorrectionFlags{true, true, EstimatorKind::rlls}};
  cfg.output_dir = out;
  cfg.seed = 3;
  cfg.adapt.train.epochs = 2;
  return cfg;
}

RunRecord record(std::optional<double> alpha, std::uint64_t seed, const std::string& method,
                 CorrectionFlags c, double acc) {
  RunRecord r;
  r.task_id = "toy";
  r.alpha = alpha;
  r.seed = seed;
  r.method = method;
  r.corrections = c;
  r.target_accuracy = acc;
  r.source_val_accuracy = 0.875;
  r.wall_time_seconds = 0.5;
  return r;
}

std::vector<RunRecord> golden_records() {
  const CorrectionFlags none{}, rsrw{true, true, EstimatorKind::rlls};
  std::vector<RunRecord> rs;
  rs.push_back(record(std::nullopt, 0, "source_only", none, 0.75));
  rs.back().true_marginal = {0.5, 0.5};
  rs.push_back(record(std::nullopt, 0, "pseudolabel", rsrw, 0.8125));
  rs.back().true_marginal = {0.5, 0.5};
  rs.back().estimated_marginal = std::vector<double>{0.625, 0.375};
  rs.back().marginal_l1_error = 0.25;
  rs.push_back(record(0.5, 0, "source_only", none, 0.5));
  rs.back().true_marginal = {0.75, 0.25};
  rs.push_back(record(0.5, 0, "pseudolabel", rsrw, 0.75));
  rs.back().true_marginal = {0.75, 0.25};
  rs.back().estimated_marginal = std::vector<double>{0.6875, 0.3125};
  rs.back().marginal_l1_error = 0.125;
  rs.push_back(record(0.5, 1, "iw_erm", CorrectionFlags{false, true, EstimatorKind::mlls}, 0.0));
  rs.back().ok = false;
  rs.back().error = "InfeasibleMarginal: pool has no examples of class 1";
  return rs;
}

}  // namespace

TEST_CASE("evaluate examples") {
  MatrixXd f(2, 2);
  f << 0.6, 0.4, 0.4, 0.6;
  CHECK(evaluate(PredictionMatrix(f), {0, 0}).accuracy == 0.5);
  CHECK(evaluate(PredictionMatrix(MatrixXd::Identity(2, 2)), {0, 1}).accuracy == 1.0);
  LabelMarginal p = LabelMarginal::uniform(2);
  CHECK(*evaluate(PredictionMatrix(f), {0, 1}, p, p).l1_error == 0.0);
  CHECK_THROWS_AS(evaluate(PredictionMatrix(f), {0}), Error);
}

TEST_CASE("relative accuracy") {
  RunRecord base = record(0.5, 0, "source_only", {}, 0.75);
  RunRecord r = record(0.5, 0, "pseudolabel", {}, 0.81);
  CHECK(relative_accuracy(r, base) == doctest::Approx(0.06));
  CHECK(relative_accuracy(base, base) == 0.0);
  r.target_accuracy = 0.70;
  CHECK(relative_accuracy(r, base) == doctest::Approx(-0.05));
  RunRecord other = record(0.5, 1, "source_only", {}, 0.75);
  CHECK_THROWS_AS(relative_accuracy(r, other), Error);
  CHECK_THROWS_AS(relative_accuracy(r, r), Error);
}

TEST_CASE("percentile and aggregate statistics") {
  CHECK(percentile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(percentile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
  CHECK(percentile({7}, 0.75) == 7.0);

  std::vector<RunRecord> base{record(1.0, 0, "source_only", {}, 0.5), record(1.0, 1, "source_only", {}, 0.5)};
  std::vector<RunRecord> rs{record(1.0, 0, "pseudolabel", {}, 0.52), record(1.0, 1, "pseudolabel", {}, 0.54)};
  auto s = aggregate(rs, base);
  REQUIRE(s.size() == 1);
  CHECK(s[0].count == 2);
  CHECK(s[0].mean_rel_acc == doctest::Approx(0.03));
  CHECK(s[0].median_rel_acc == doctest::Approx(0.03));

  auto zero = aggregate(base, base);
  CHECK(zero[0].mean_rel_acc == 0.0);
  CHECK(zero[0].q75 == 0.0);

  std::vector<RunRecord> orphan{record(0.5, 0, "pseudolabel", {}, 0.5)};
  CHECK_THROWS_AS(aggregate(orphan, base), Error);
}

TEST_CASE("golden JSONL and summary CSV") {
  std::string jsonl;
  for (const auto& r : golden_records()) jsonl += record_to_jsonl(r) + "\n";
  CHECK(jsonl == slurp(fs::path(RLSHIFT_GOLDEN_DIR) / "records.jsonl"));

  std::vector<RunRecord> rs = golden_records();
  std::string csv = summary_csv(aggregate(rs, rs));
  CHECK(csv == slurp(fs::path(RLSHIFT_GOLDEN_DIR) / "summary.csv"));
  CHECK(csv.substr(0, csv.find('\n')) == kSummaryHeader);

  std::mt19937 shuffle_rng(7);
  std::shuffle(rs.begin(), rs.end(), shuffle_rng);
  CHECK(summary_csv(aggregate(rs, rs)) == csv);

  std::vector<RunRecord> parsed = read_results(fs::path(RLSHIFT_GOLDEN_DIR) / "records.jsonl");
  REQUIRE(parsed.size() == 5);
  for (std::size_t i = 0; i < parsed.size(); ++i) CHECK(same_outcome(parsed[i], golden_records()[i]));
  CHECK_THROWS_AS(record_from_jsonl(R"({"v":2})"), Error);
}

TEST_CASE("grid count, resume and parallel determinism") {
  fs::path dir = scratch_dir("grid");
  GridConfig cfg = tiny_grid(dir / "serial");
  CHECK(plan_cells(cfg).size() == 40);

  GridRun serial = run_grid(cfg);
  CHECK(serial.records.size() == 40);
  CHECK(serial.executed == 40);
  CHECK(serial.failed == 0);
  std::size_t lines = 0;
  std::ifstream in(cfg.output_dir / "results.jsonl");
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 40);

  GridRun resumed = run_grid(cfg, RunOptions{1, true, {}});
  CHECK(resumed.executed == 0);
  CHECK(resumed.skipped == 40);

  GridConfig par_cfg = cfg;
  par_cfg.output_dir = dir / "parallel";
  GridRun parallel = run_grid(par_cfg, RunOptions{8, false, {}});
  REQUIRE(parallel.records.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) CHECK(same_outcome(serial.records[i], parallel.records[i]));

  for (const auto& r : serial.records) {
    CHECK(r.target_accuracy >= 0.0);
    CHECK(r.target_accuracy <= 1.0);
    if (r.marginal_l1_error) CHECK(*r.marginal_l1_error <= 2.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("prediction dump round trip and tolerance") {
  fs::path dir = scratch_dir("dump");
  RngStream rng(1, 77);
  MatrixXd f(20, 3);
  for (Index i = 0; i < 20; ++i) {
    for (Index j = 0; j < 3; ++j) f(i, j) = rng.uniform() + 1e-3;
    f.row(i) /= f.row(i).sum();
  }
  Labels y;
  for (int i = 0; i < 20; ++i) y.push_back(i % 3);
  io::write_predictions(dir / "p.csv", PredictionMatrix(f), &y);
  io::PredictionDump d = io::ingest_predictions(dir / "p.csv");
  CHECK((d.predictions.values() - f).cwiseAbs().maxCoeff() <= 1e-12);
  REQUIRE(d.labels);
  CHECK(*d.labels == y);

  spit(dir / "near.csv", "p0,p1\n0.5,0.5001\n");
  io::PredictionDump near = io::ingest_predictions(dir / "near.csv");
  CHECK(near.predictions.values().row(0).sum() == doctest::Approx(1.0).epsilon(1e-15));

  spit(dir / "far.csv", "p0,p1\n0.5,0.5\n0.9,0.5\n");
  try {
    io::ingest_predictions(dir / "far.csv");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  CHECK(io::ingest_predictions(dir / "far.csv", true).predictions.values()(1, 0) == doctest::Approx(0.9 / 1.4));

  spit(dir / "ragged.csv", "p0,p1\n0.5\n");
  CHECK_THROWS_AS(io::ingest_predictions(dir / "ragged.csv"), Error);
  spit(dir / "neg.csv", "p0,p1\n-0.5,1.5\n");
  CHECK_THROWS_AS(io::ingest_predictions(dir / "neg.csv"), Error);
  spit(dir / "text.csv", "p0,p1\nabc,0.5\n");
  CHECK_THROWS_AS(io::ingest_predictions(dir / "text.csv"), Error);
  fs::remove_all(dir);
}

TEST_CASE("bundle save and load") {
  fs::path dir = scratch_dir("bundle");
  SynthTaskSpec spec;
  spec.n_source = 200;
  spec.n_target_pool = 200;
  spec.epsilon = 1.0;
  TaskBundle b = synth_relaxed_task(spec, ShiftSpec{1.0, 2});
  io::save_bundle(dir, b);
  TaskBundle c = io::load_bundle(dir);
  CHECK(c.source_train.features == b.source_train.features);
  CHECK(c.source_val.labels == b.source_val.labels);
  CHECK(c.target_train.features == b.target_train.features);
  CHECK(c.target_test.labels == b.target_test.labels);
  CHECK(c.true_target_marginal == b.true_target_marginal);
  CHECK(c.alpha == b.alpha);
  CHECK(c.epsilon == b.epsilon);
  CHECK(c.seed == b.seed);
  fs::remove_all(dir);
}

TEST_CASE("model save and load") {
  fs::path dir = scratch_dir("model");
  Model m;
  m.spec = ModelSpec{ModelKind::mlp, 3, 2, 2};
  m.parameters = init_parameters(m.spec, 4);
  m.training_log = {0.5, 0.75};
  m.best_epoch = 1;
  io::save_model(dir / "m.json", m);
  Model n = io::load_model(dir / "m.json");
  CHECK(n.spec == m.spec);
  CHECK(n.parameters == m.parameters);
  CHECK(n.training_log == m.training_log);
  CHECK(n.best_epoch == 1);
  fs::remove_all(dir);
}
