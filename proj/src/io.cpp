#include "rlshift/io.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>
#include <vector>

namespace rlshift::io {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

[[noreturn]] void parse_fail(const fs::path& path, std::size_t line, const std::string& what) {
  throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(line) + ": " + what);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_number(std::string_view cell, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto res = std::from_chars(cell.data(), end, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    parse_fail(path, line, "non-numeric cell '" + std::string(cell) + "'");
  }
  return v;
}

int parse_label(std::string_view cell, const fs::path& path, std::size_t line) {
  int v = 0;
  const char* end = cell.data() + cell.size();
  const auto res = std::from_chars(cell.data(), end, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != end || v < 0) {
    parse_fail(path, line, "invalid class label '" + std::string(cell) + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string_view>>> rows;  // line number, cells
  std::string storage;
};

CsvTable read_table(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path.string());
  CsvTable t;
  std::ostringstream ss;
  ss << in.rdbuf();
  t.storage = ss.str();
  std::string_view all(t.storage);
  std::size_t line_no = 0;
  bool have_header = false;
  while (!all.empty()) {
    const std::size_t nl = all.find('\n');
    std::string_view line = all.substr(0, nl);
    all = nl == std::string_view::npos ? std::string_view{} : all.substr(nl + 1);
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (!have_header) {
      for (auto c : cells) t.header.emplace_back(c);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      parse_fail(path, line_no, "expected " + std::to_string(t.header.size()) + " cells, found " +
                                    std::to_string(cells.size()));
    }
    t.rows.emplace_back(line_no, std::move(cells));
  }
  if (!have_header) parse_fail(path, 1, "missing header");
  return t;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << text;
}

json marginal_json(const LabelMarginal& p) {
  json arr = json::array();
  for (Index y = 0; y < p.size(); ++y) arr.push_back(p[y]);
  return arr;
}

}  // namespace

LabeledSet read_labeled_csv(const fs::path& path, std::optional<Index> classes) {
  const CsvTable t = read_table(path);
  if (t.header.empty() || t.header.back() != "y") parse_fail(path, 1, "last column must be 'y'");
  const Index d = static_cast<Index>(t.header.size()) - 1;
  for (Index j = 0; j < d; ++j) {
    if (t.header[static_cast<std::size_t>(j)] != "f" + std::to_string(j)) {
      parse_fail(path, 1, "expected column 'f" + std::to_string(j) + "'");
    }
  }
  MatrixXd x(static_cast<Index>(t.rows.size()), d);
  Labels labels(t.rows.size());
  int max_label = -1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& [line, cells] = t.rows[r];
    for (Index j = 0; j < d; ++j) x(static_cast<Index>(r), j) = parse_number(cells[static_cast<std::size_t>(j)], path, line);
    labels[r] = parse_label(cells.back(), path, line);
    if (classes && labels[r] >= *classes) parse_fail(path, line, "label exceeds class count");
    max_label = std::max(max_label, labels[r]);
  }
  return LabeledSet(std::move(x), std::move(labels), classes.value_or(std::max<Index>(2, max_label + 1)));
}

void write_labeled_csv(const fs::path& path, const LabeledSet& set) {
  std::string out;
  for (Index j = 0; j < set.dim(); ++j) out += "f" + std::to_string(j) + ",";
  out += "y\n";
  for (Index i = 0; i < set.size(); ++i) {
    for (Index j = 0; j < set.dim(); ++j) out += format_double(set.features(i, j)) + ",";
    out += std::to_string(set.labels[static_cast<std::size_t>(i)]) + "\n";
  }
  write_text(path, out);
}

PredictionDump ingest_predictions(const fs::path& path, bool normalize) {
  const CsvTable t = read_table(path);
  const bool has_labels = !t.header.empty() && t.header.back() == "y";
  const auto k = static_cast<Index>(t.header.size()) - (has_labels ? 1 : 0);
  if (k < 2) parse_fail(path, 1, "need at least two probability columns");
  for (Index j = 0; j < k; ++j) {
    if (t.header[static_cast<std::size_t>(j)] != "p" + std::to_string(j)) {
      parse_fail(path, 1, "expected column 'p" + std::to_string(j) + "'");
    }
  }
  MatrixXd p(static_cast<Index>(t.rows.size()), k);
  Labels labels;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& [line, cells] = t.rows[r];
    const auto i = static_cast<Index>(r);
    for (Index j = 0; j < k; ++j) {
      const double v = parse_number(cells[static_cast<std::size_t>(j)], path, line);
      if (v < 0.0) parse_fail(path, line, "negative probability");
      p(i, j) = v;
    }
    const double total = p.row(i).sum();
    if (!(total > 0.0)) parse_fail(path, line, "row has zero probability mass");
    if (std::abs(total - 1.0) > 1e-3 && !normalize) {
      parse_fail(path, line, "row sums to " + format_double(total) + " (use --normalize)");
    }
    p.row(i) /= total;
    if (has_labels) {
      const int y = parse_label(cells.back(), path, line);
      if (y >= k) parse_fail(path, line, "label exceeds class count");
      labels.push_back(y);
    }
  }
  PredictionDump dump{PredictionMatrix(std::move(p)), std::nullopt};
  if (has_labels) dump.labels = std::move(labels);
  return dump;
}

void write_predictions(const fs::path& path, const PredictionMatrix& preds, const Labels* labels) {
  std::string out;
  for (Index j = 0; j < preds.classes(); ++j) out += (j ? ",p" : "p") + std::to_string(j);
  out += labels ? ",y\n" : "\n";
  for (Index i = 0; i < preds.rows(); ++i) {
    for (Index j = 0; j < preds.classes(); ++j) out += (j ? "," : "") + format_double(preds.values()(i, j));
    if (labels) out += "," + std::to_string((*labels)[static_cast<std::size_t>(i)]);
    out += "\n";
  }
  write_text(path, out);
}

void save_bundle(const fs::path& dir, const TaskBundle& bundle) {
  fs::create_directories(dir);
  write_labeled_csv(dir / "source_train.csv", bundle.source_train);
  write_labeled_csv(dir / "source_val.csv", bundle.source_val);
  write_labeled_csv(dir / "target_train.csv", bundle.target_train);
  write_labeled_csv(dir / "target_test.csv", bundle.target_test);
  json manifest = {
      {"k", bundle.classes()},
      {"d", bundle.dim()},
      {"alpha", bundle.alpha ? json(*bundle.alpha) : json(nullptr)},
      {"epsilon", bundle.epsilon},
      {"seed", bundle.seed},
      {"true_target_marginal", marginal_json(bundle.true_target_marginal)},
  };
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

TaskBundle load_bundle(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::ParseError, "cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, "manifest.json: " + std::string(e.what()));
  }
  TaskBundle b;
  try {
    const auto k = manifest.at("k").get<Index>();
    b.source_train = read_labeled_csv(dir / "source_train.csv", k);
    b.source_val = read_labeled_csv(dir / "source_val.csv", k);
    b.target_train = read_labeled_csv(dir / "target_train.csv", k);
    b.target_test = read_labeled_csv(dir / "target_test.csv", k);
    if (b.dim() != manifest.at("d").get<Index>()) throw Error(ErrorKind::ParseError, "manifest d mismatch");
    if (!manifest.at("alpha").is_null()) b.alpha = manifest.at("alpha").get<double>();
    b.epsilon = manifest.at("epsilon").get<double>();
    b.seed = manifest.at("seed").get<std::uint64_t>();
    const auto probs = manifest.at("true_target_marginal").get<std::vector<double>>();
    b.true_target_marginal = LabelMarginal(Eigen::Map<const VectorXd>(probs.data(), static_cast<Index>(probs.size())));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, "manifest.json: " + std::string(e.what()));
  }
  return b;
}

void save_model(const fs::path& path, const Model& model) {
  json j = {
      {"kind", std::string(model_kind_name(model.spec.kind))},
      {"hidden_units", model.spec.hidden_units},
      {"input_dim", model.spec.input_dim},
      {"classes", model.spec.classes},
      {"parameters", std::vector<double>(model.parameters.data(), model.parameters.data() + model.parameters.size())},
      {"training_log", model.training_log},
      {"best_epoch", model.best_epoch},
  };
  write_text(path, j.dump() + "\n");
}

Model load_model(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path.string());
  try {
    const json j = json::parse(in);
    Model m;
    m.spec.kind = model_kind_from_name(j.at("kind").get<std::string>());
    m.spec.hidden_units = j.at("hidden_units").get<Index>();
    m.spec.input_dim = j.at("input_dim").get<Index>();
    m.spec.classes = j.at("classes").get<Index>();
    m.spec.validate();
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (static_cast<Index>(params.size()) != m.spec.parameter_count()) {
      throw Error(ErrorKind::ParseError, "parameter count does not match the model spec");
    }
    m.parameters = Eigen::Map<const VectorXd>(params.data(), static_cast<Index>(params.size()));
    m.training_log = j.at("training_log").get<std::vector<double>>();
    m.best_epoch = j.value("best_epoch", -1);
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace rlshift::io
