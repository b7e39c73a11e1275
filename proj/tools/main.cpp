#include "rlshift/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rlshift;
  CLI::App app{"Label-shift estimation, correction and benchmark harness"};
  app.require_subcommand(1);

  cli::RunFlags run_flags;
  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment grid from a JSON config");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--jobs", run_flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--resume", run_flags.resume, "Skip cells already present in results.jsonl");
  run->add_flag("--dry-run", run_flags.dry_run, "Print the cell plan only");

  cli::EstimateFlags est_flags;
  std::string p_source;
  double lambda = -1.0;
  auto* est = app.add_subcommand("estimate", "Estimate a target label marginal from prediction dumps");
  est->add_option("source_preds", est_flags.source_preds, "Labeled source-validation dump (p0..,y)")->required();
  est->add_option("target_preds", est_flags.target_preds, "Target dump (p0..)")->required();
  est->add_option("--estimator", est_flags.estimator, "rlls | mlls | baseline")
      ->check(CLI::IsMember({"rlls", "mlls", "baseline"}));
  est->add_option("--lambda", lambda, "RLLS regularization (default depends on n)")->check(CLI::NonNegativeNumber);
  est->add_option("--p-source", p_source, "Comma-separated training label marginal");
  est->add_flag("--normalize", est_flags.normalize, "Renormalize rows that do not sum to one");

  cli::SynthFlags synth_flags;
  double synth_alpha = -1.0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic relaxed-label-shift task bundle");
  synth->add_option("out", synth_flags.out_dir, "Output directory")->required();
  synth->add_option("--k", synth_flags.spec.k, "Classes");
  synth->add_option("--d", synth_flags.spec.d, "Feature dimension");
  synth->add_option("--epsilon", synth_flags.spec.epsilon, "Class-conditional translation norm");
  synth->add_option("--alpha", synth_alpha, "Dirichlet severity (omit for no shift)");
  synth->add_option("--seed", synth_flags.spec.seed, "Seed");
  synth->add_option("--n-source", synth_flags.spec.n_source, "Source examples");
  synth->add_option("--n-target", synth_flags.spec.n_target_pool, "Target pool examples");
  synth->add_option("--separation", synth_flags.spec.class_separation, "Distance between class means");

  cli::AdaptFlags adapt_flags;
  std::string estimator = "rlls";
  std::string model_kind = "logistic";
  auto* adapt = app.add_subcommand("adapt", "Train and correct one model on a task bundle");
  adapt->add_option("bundle", adapt_flags.bundle_dir, "Task bundle directory")->required();
  adapt->add_option("--method", adapt_flags.method, "source_only | pseudolabel | iw_erm")
      ->check(CLI::IsMember({"source_only", "pseudolabel", "iw_erm"}));
  adapt->add_flag("--resample", adapt_flags.corrections.resample, "Class-balanced re-sampling");
  adapt->add_flag("--reweight", adapt_flags.corrections.reweight, "Post-hoc re-weighting");
  adapt->add_option("--estimator", estimator, "rlls | mlls | baseline")
      ->check(CLI::IsMember({"rlls", "mlls", "baseline"}));
  adapt->add_option("--model", model_kind, "logistic | mlp")->check(CLI::IsMember({"logistic", "mlp"}));
  adapt->add_option("--hidden", adapt_flags.config.model.hidden_units, "Hidden units (mlp)");
  adapt->add_option("--epochs", adapt_flags.config.train.epochs, "Epochs");
  adapt->add_option("--batch-size", adapt_flags.config.train.batch_size, "Batch size");
  adapt->add_option("--lr", adapt_flags.config.train.learning_rate, "Learning rate");
  adapt->add_option("--seed", adapt_flags.config.train.seed, "Training seed");
  adapt->add_option("--model-out", adapt_flags.model_out, "Write the trained model as JSON");

  cli::ReportFlags report_flags;
  auto* report = app.add_subcommand("report", "Aggregate a results file into summary CSV");
  report->add_option("results", report_flags.results, "results.jsonl")->required();
  report->add_option("--out", report_flags.summary_out, "Summary CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : cli::kExitConfig;
  }

  if (*run) return cli::command_run(config_path, run_flags, std::cout, std::cerr);
  if (*est) {
    if (lambda >= 0.0) est_flags.lambda = lambda;
    if (!p_source.empty()) {
      try {
        est_flags.p_source = parse_list(p_source);
      } catch (const std::exception&) {
        std::cerr << "--p-source must be a comma-separated list of numbers\n";
        return cli::kExitConfig;
      }
    }
    return cli::command_estimate(est_flags, std::cout, std::cerr);
  }
  if (*synth) {
    if (synth_alpha > 0.0) synth_flags.alpha = synth_alpha;
    return cli::command_synth(synth_flags, std::cout, std::cerr);
  }
  if (*adapt) {
    adapt_flags.corrections.estimator = estimator_from_name(estimator);
    adapt_flags.config.model.kind = model_kind_from_name(model_kind);
    if (adapt_flags.config.model.kind == ModelKind::mlp && adapt_flags.config.model.hidden_units < 1) {
      adapt_flags.config.model.hidden_units = 16;
    }
    return cli::command_adapt(adapt_flags, std::cout, std::cerr);
  }
  return cli::command_report(report_flags, std::cout, std::cerr);
}
