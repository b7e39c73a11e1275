#pragma once

#include "rlshift/core.hpp"
#include "rlshift/model.hpp"
#include "rlshift/shift.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace rlshift::io {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// CSV with header `f0,...,f{d-1},y`. Classes default to max(y) + 1.
LabeledSet read_labeled_csv(const std::filesystem::path& path, std::optional<Index> classes = {});
void write_labeled_csv(const std::filesystem::path& path, const LabeledSet& set);

struct PredictionDump {
  PredictionMatrix predictions;
  std::optional<Labels> labels;
};

/// CSV with header `p0,...,p{k-1}[,y]`. Rows within 1e-3 of summing to one
/// are renormalized; larger deviations are a ParseError unless `normalize`.
PredictionDump ingest_predictions(const std::filesystem::path& path, bool normalize = false);
void write_predictions(const std::filesystem::path& path, const PredictionMatrix& preds,
                       const Labels* labels = nullptr);

/// Directory of source_train/source_val/target_train/target_test CSVs plus
/// manifest.json.
void save_bundle(const std::filesystem::path& dir, const TaskBundle& bundle);
TaskBundle load_bundle(const std::filesystem::path& dir);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace rlshift::io
