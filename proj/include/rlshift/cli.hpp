#pragma once

#include "rlshift/bench.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rlshift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartialFailure = 2;
inline constexpr int kExitDiagnostic = 3;

/// Parses a JSON run configuration. Unknown keys are a ConfigError naming
/// the key; relative paths resolve against `base_dir`.
bench::GridConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
bench::GridConfig load_config(const std::filesystem::path& path);

struct RunFlags {
  unsigned jobs = 1;
  bool resume = false;
  bool dry_run = false;
};

int command_run(const std::filesystem::path& config_path, const RunFlags& flags, std::ostream& out,
                std::ostream& err);

struct EstimateFlags {
  std::filesystem::path source_preds;  // dump with a y column
  std::filesystem::path target_preds;
  std::string estimator = "rlls";
  std::optional<double> lambda;
  std::optional<std::vector<double>> p_source;
  bool normalize = false;
};

int command_estimate(const EstimateFlags& flags, std::ostream& out, std::ostream& err);

struct SynthFlags {
  SynthTaskSpec spec;
  std::optional<double> alpha;
  std::filesystem::path out_dir;
};

int command_synth(const SynthFlags& flags, std::ostream& out, std::ostream& err);

struct AdaptFlags {
  std::filesystem::path bundle_dir;
  std::string method = "source_only";
  CorrectionFlags corrections;
  AdaptConfig config;
  std::filesystem::path model_out;
};

int command_adapt(const AdaptFlags& flags, std::ostream& out, std::ostream& err);

struct ReportFlags {
  std::filesystem::path results;
  std::filesystem::path summary_out;
};

int command_report(const ReportFlags& flags, std::ostream& out, std::ostream& err);

}  // namespace rlshift::cli
