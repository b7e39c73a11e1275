#include "rlshift/cli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rlshift;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("rlshift_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyConfig = R"({
  "seed": 1,
  "output_dir": "out",
  "tasks": [{"id": "tiny", "type": "synthetic", "k": 3, "d": 4, "n_source": 300, "n_target_pool": 300,
             "class_separation": 3.0}],
  "alphas": [null, 10, 3, 1, 0.5],
  "seeds": [0, 1],
  "methods": ["source_only", "pseudolabel"],
  "corrections": [{"resample": false, "reweight": false}, {"resample": true, "reweight": true}],
  "train": {"epochs": 2}
})";

int estimate(const fs::path& src, const fs::path& tgt, const std::string& estimator, json& out,
             std::optional<double> lambda = std::nullopt) {
  cli::EstimateFlags flags;
  flags.source_preds = src;
  flags.target_preds = tgt;
  flags.estimator = estimator;
  flags.lambda = lambda;
  std::ostringstream o, e;
  int code = cli::command_estimate(flags, o, e);
  out = json::parse(o.str());
  return code;
}

}  // namespace

TEST_CASE("config parsing") {
  bench::GridConfig cfg = cli::parse_config(kTinyConfig, "/base");
  CHECK(cfg.tasks.size() == 1);
  CHECK(cfg.output_dir == fs::path("/base/out"));
  CHECK(bench::plan_cells(cfg).size() == 40);
  CHECK(cfg.adapt.train.epochs == 2);

  try {
    cli::parse_config(R"({"tasks": [], "alpa": [1]})", ".");
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
    CHECK(std::string(e.what()).find("alpa") != std::string::npos);
  }
  CHECK_THROWS_AS(cli::parse_config("{not json", "."), Error);
  CHECK_THROWS_AS(cli::parse_config(R"({"tasks": [{"id": "t", "kk": 3}]})", "."), Error);
}

TEST_CASE("run: dry run, happy path and bad config") {
  fs::path dir = scratch_dir("run");
  spit(dir / "grid.json", kTinyConfig);
  std::ostringstream out, err;
  CHECK(cli::command_run(dir / "grid.json", {1, false, true}, out, err) == cli::kExitOk);
  CHECK(out.str().find("40 cells") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));

  std::ostringstream out2, err2;
  CHECK(cli::command_run(dir / "grid.json", {2, false, false}, out2, err2) == cli::kExitOk);
  CHECK(fs::exists(dir / "out" / "results.jsonl"));
  CHECK(fs::exists(dir / "out" / "summary.csv"));

  std::ostringstream out3, err3;
  CHECK(cli::command_run(dir / "grid.json", {1, true, false}, out3, err3) == cli::kExitOk);

  spit(dir / "bad.json", R"({"tasks": [], "alpa": [1]})");
  std::ostringstream out4, err4;
  CHECK(cli::command_run(dir / "bad.json", {}, out4, err4) == cli::kExitConfig);
  CHECK(err4.str().find("alpa") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("estimate: perfect classifier, baseline, worked example") {
  fs::path dir = scratch_dir("estimate");
  spit(dir / "src.csv", "p0,p1,y\n1,0,0\n1,0,0\n0,1,1\n0,1,1\n");
  std::string tgt = "p0,p1\n";
  for (int i = 0; i < 3; ++i) tgt += "1,0\n";
  for (int i = 0; i < 7; ++i) tgt += "0,1\n";
  spit(dir / "tgt.csv", tgt);
  for (std::string name : {"rlls", "mlls", "baseline"}) {
    json out;
    estimate(dir / "src.csv", dir / "tgt.csv", name, out, 0.0);
    CHECK(out["target_marginal"][0].get<double>() == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(out["target_marginal"][1].get<double>() == doctest::Approx(0.7).epsilon(1e-6));
  }

  spit(dir / "soft.csv", "p0,p1\n0.2,0.8\n0.6,0.4\n");
  json base;
  CHECK(estimate(dir / "src.csv", dir / "soft.csv", "baseline", base) == cli::kExitOk);
  CHECK(base["target_marginal"][0].get<double>() == doctest::Approx(0.4));

  spit(dir / "wsrc.csv", "p0,p1,y\n0.9,0.1,0\n0.1,0.9,1\n");
  spit(dir / "wtgt.csv", "p0,p1\n0.26,0.74\n");
  json w;
  CHECK(estimate(dir / "wsrc.csv", dir / "wtgt.csv", "rlls", w, 0.0) == cli::kExitOk);
  CHECK(w["importance_weights"][0].get<double>() == doctest::Approx(0.4).epsilon(1e-5));
  CHECK(w["importance_weights"][1].get<double>() == doctest::Approx(1.6).epsilon(1e-5));

  spit(dir / "gap.csv", "p0,p1,p2,y\n0.8,0.1,0.1,0\n0.1,0.8,0.1,1\n");
  spit(dir / "gtgt.csv", "p0,p1,p2\n0.1,0.1,0.8\n");
  json diag;
  CHECK(estimate(dir / "gap.csv", dir / "gtgt.csv", "rlls", diag) == cli::kExitDiagnostic);
  CHECK_FALSE(diag["diagnostics"].empty());
  fs::remove_all(dir);
}

TEST_CASE("synth, adapt and report") {
  fs::path dir = scratch_dir("synth");
  cli::SynthFlags sf;
  sf.spec.n_source = 300;
  sf.spec.n_target_pool = 300;
  sf.alpha = 1.0;
  sf.out_dir = dir / "bundle";
  std::ostringstream o, e;
  REQUIRE(cli::command_synth(sf, o, e) == cli::kExitOk);
  CHECK(fs::exists(dir / "bundle" / "manifest.json"));

  cli::AdaptFlags af;
  af.bundle_dir = dir / "bundle";
  af.method = "pseudolabel";
  af.corrections = CorrectionFlags{true, true, EstimatorKind::mlls};
  af.config.train.epochs = 2;
  af.model_out = dir / "model.json";
  std::ostringstream ao, ae;
  REQUIRE(cli::command_adapt(af, ao, ae) == cli::kExitOk);
  json metrics = json::parse(ao.str());
  CHECK(metrics.contains("target_accuracy"));
  CHECK(fs::exists(dir / "model.json"));

  std::ofstream(dir / "results.jsonl")
      << R"({"v":1,"task_id":"t","alpha":null,"seed":0,"method":"source_only","corrections":"none","resample":false,"reweight":false,"estimator":"none","status":"ok","error":null,"target_accuracy":0.5,"source_val_accuracy":0.5,"marginal_l1_error":null,"true_marginal":[0.5,0.5],"estimated_marginal":null,"wall_time_seconds":0.1})"
      << "\n";
  cli::ReportFlags rf{dir / "results.jsonl", {}};
  std::ostringstream ro, re;
  CHECK(cli::command_report(rf, ro, re) == cli::kExitOk);
  CHECK(ro.str().rfind(bench::kSummaryHeader, 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("binary entry point") {
  const char* exe = std::getenv("RLSHIFT_CLI");
  if (!exe) return;
  fs::path dir = scratch_dir("binary");
  spit(dir / "grid.json", kTinyConfig);
  std::string base = std::string("\"") + exe + "\" ";
  CHECK(std::system((base + "run \"" + (dir / "grid.json").string() + "\" --dry-run > \"" +
                     (dir / "plan.txt").string() + "\"")
                        .c_str()) == 0);
  std::ifstream plan(dir / "plan.txt");
  std::stringstream ss;
  ss << plan.rdbuf();
  CHECK(ss.str().find("40 cells") != std::string::npos);
  CHECK(std::system((base + "bogus > /dev/null 2>&1").c_str()) != 0);
  fs::remove_all(dir);
}
