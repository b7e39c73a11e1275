#pragma once

#include "rlshift/adapt.hpp"
#include "rlshift/core.hpp"
#include "rlshift/shift.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rlshift::bench {

struct SyntheticTask {
  std::string id;
  SynthTaskSpec spec;
};

/// Labeled source CSV plus a labeled target pool CSV; the pool's empirical
/// marginal is the base target marginal.
struct DatasetTask {
  std::string id;
  std::filesystem::path source_csv;
  std::filesystem::path target_csv;
};

using TaskSource = std::variant<SyntheticTask, DatasetTask>;

const std::string& task_id(const TaskSource& task);

struct GridConfig {
  std::vector<TaskSource> tasks;
  std::vector<std::optional<double>> alphas{std::nullopt, 10.0, 3.0, 1.0, 0.5};
  std::vector<std::uint64_t> seeds{0, 1};
  std::vector<Algorithm> methods{Algorithm::source_only};
  std::vector<CorrectionFlags> corrections{CorrectionFlags{}};
  std::filesystem::path output_dir = "results";
  std::uint64_t seed = 0;
  AdaptConfig adapt;

  void validate() const;
};

struct Cell {
  std::size_t task = 0;
  std::optional<double> alpha;
  std::uint64_t seed = 0;
  Algorithm method = Algorithm::source_only;
  CorrectionFlags corrections;
};

std::string alpha_label(const std::optional<double>& alpha);
std::string estimator_label(const CorrectionFlags& c);

/// task x alpha x seed x method x corrections, in that nesting order.
std::vector<Cell> plan_cells(const GridConfig& cfg);

struct RunRecord {
  std::string task_id;
  std::optional<double> alpha;
  std::uint64_t seed = 0;
  std::string method;
  CorrectionFlags corrections;
  bool ok = true;
  std::string error;
  double target_accuracy = 0.0;
  double source_val_accuracy = 0.0;
  std::optional<double> marginal_l1_error;
  std::vector<double> true_marginal;
  std::optional<std::vector<double>> estimated_marginal;
  double wall_time_seconds = 0.0;

  /// Identity of the grid cell this record belongs to.
  std::string cell_key() const;
};

std::string cell_key(const GridConfig& cfg, const Cell& cell);

/// One JSONL line (no trailing newline), schema version 1.
std::string record_to_jsonl(const RunRecord& r);
RunRecord record_from_jsonl(const std::string& line);

/// Outcome fields equal; wall time ignored.
bool same_outcome(const RunRecord& a, const RunRecord& b);

struct Metrics {
  double accuracy = 0.0;
  std::optional<double> l1_error;
};

/// Argmax accuracy (ties to the lowest class) and, when both marginals are
/// given, their l1 distance.
Metrics evaluate(const PredictionMatrix& preds, const Labels& labels,
                 const std::optional<LabelMarginal>& p_hat = std::nullopt,
                 const std::optional<LabelMarginal>& p_true = std::nullopt);

/// record.target_accuracy - baseline.target_accuracy on the same
/// (task, alpha, seed); the baseline must be uncorrected source_only.
double relative_accuracy(const RunRecord& record, const RunRecord& baseline);

bool is_baseline(const RunRecord& r);

/// Builds the task bundle of one cell; deterministic in the cell coordinates.
TaskBundle build_cell_task(const GridConfig& cfg, const Cell& cell);
RunRecord run_cell(const GridConfig& cfg, const Cell& cell);

struct RunOptions {
  unsigned jobs = 1;
  bool resume = false;
  std::filesystem::path results_file;  // default: output_dir/results.jsonl
};

struct GridRun {
  std::vector<RunRecord> records;  // plan order
  std::size_t executed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

GridRun run_grid(const GridConfig& cfg, const RunOptions& opt = {});

std::vector<RunRecord> read_results(const std::filesystem::path& path);

/// Linear interpolation between order statistics at rank q * (n - 1).
double percentile(std::vector<double> values, double q);

struct Summary {
  std::optional<double> alpha;
  std::string method;
  std::string corrections;
  std::string estimator;
  std::size_t count = 0;
  double mean_rel_acc = 0.0;
  double median_rel_acc = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  std::optional<double> mean_l1;
  std::optional<double> median_l1;
};

/// Groups successful records by (alpha, method, corrections, estimator).
/// Throws PairingError when a record has no matching baseline.
std::vector<Summary> aggregate(const std::vector<RunRecord>& records,
                               const std::vector<RunRecord>& baselines);

inline constexpr const char* kSummaryHeader =
    "alpha,method,corrections,estimator,n,mean_rel_acc,median_rel_acc,q25,q75,mean_l1,median_l1";

std::string summary_csv(const std::vector<Summary>& summaries);

}  // namespace rlshift::bench
