#pragma once

// Evaluation artifacts: confusion matrices, degradation tables, and their
// JSON/CSV renderings. Figures are emitted as plot-ready data only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/error.hpp"
#include "snn/io.hpp"
#include "snn/matrix.hpp"
#include "snn/stacking.hpp"

namespace snn {

/// counts(x, y) = samples of actual class x predicted as class y.
struct ConfusionMatrix {
  std::vector<std::string> class_names;
  Matrix<std::uint64_t> counts;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts.values()) t += v;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < counts.rows(); ++i) t += counts(i, i);
    return t;
  }
  double accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels,
                                 std::size_t num_classes, std::vector<std::string> class_names = {}) {
  if (predictions.size() != labels.size()) throw validation_error("length mismatch between predictions and labels");
  if (class_names.empty()) {
    for (std::size_t c = 0; c < num_classes; ++c) class_names.push_back(std::to_string(c));
  }
  if (class_names.size() != num_classes) throw validation_error("class name count does not match class count");
  ConfusionMatrix cm{std::move(class_names), Matrix<std::uint64_t>(num_classes, num_classes)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) throw validation_error("label out of range");
    ++cm.counts(labels[i], predictions[i]);
  }
  return cm;
}

// Header row "actual,<class names...>", then one row per actual class.
inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "actual";
  for (const auto& name : cm.class_names) out += "," + name;
  out += "\n";
  for (std::size_t x = 0; x < cm.counts.rows(); ++x) {
    out += cm.class_names[x];
    for (std::size_t y = 0; y < cm.counts.cols(); ++y) out += "," + std::to_string(cm.counts(x, y));
    out += "\n";
  }
  return out;
}

inline ConfusionMatrix confusion_from_csv(std::string_view text) {
  auto t = io::parse_csv(text);
  if (t.header.empty() || t.header[0] != "actual") throw validation_error("not a confusion csv");
  const std::size_t C = t.header.size() - 1;
  if (t.rows.size() != C) throw validation_error("confusion csv must have one row per class");
  ConfusionMatrix cm{{t.header.begin() + 1, t.header.end()}, Matrix<std::uint64_t>(C, C)};
  for (std::size_t x = 0; x < C; ++x) {
    if (t.rows[x].size() != C + 1) throw validation_error("ragged confusion csv");
    for (std::size_t y = 0; y < C; ++y) {
      cm.counts(x, y) = static_cast<std::uint64_t>(io::parse_int(t.rows[x][y + 1], "confusion"));
    }
  }
  return cm;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  std::vector<std::vector<std::uint64_t>> rows;
  for (std::size_t x = 0; x < cm.counts.rows(); ++x) {
    auto r = cm.counts.row(x);
    rows.emplace_back(r.begin(), r.end());
  }
  return nlohmann::json{{"class_names", cm.class_names}, {"counts", rows}, {"accuracy", cm.accuracy()}};
}

// ---------------------------------------------------------------------------
// Degradation

struct DegradationRow {
  std::string dataset;
  StackSpec spec;
  double accuracy = 0.0;
  double degradation = 0.0;
};

struct DegradationSummary {
  StackSpec spec;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation across datasets
  std::size_t datasets = 0;
};

struct DegradationTable {
  std::vector<DegradationSummary> summary;  // ascending mean, then stack key
  std::vector<DegradationRow> rows;         // grouped in summary order, datasets ascending
};

/// results[dataset][stack] = accuracy. Degradation is the dataset's best
/// accuracy minus the stack's accuracy.
inline DegradationTable degradation_table(const std::map<std::string, std::map<StackSpec, double>>& results) {
  if (results.empty()) throw validation_error("no results");
  std::map<StackSpec, std::vector<DegradationRow>> by_spec;
  for (const auto& [dataset, accs] : results) {
    if (accs.empty()) throw validation_error("dataset '" + dataset + "' has no results");
    double best = -1.0;
    for (const auto& [spec, acc] : accs) best = std::max(best, acc);
    for (const auto& [spec, acc] : accs) by_spec[spec].push_back({dataset, spec, acc, best - acc});
  }
  DegradationTable t;
  for (const auto& [spec, rows] : by_spec) {
    DegradationSummary s{spec, 0.0, 0.0, rows.size()};
    for (const auto& r : rows) s.mean += r.degradation;
    s.mean /= static_cast<double>(rows.size());
    for (const auto& r : rows) s.stddev += (r.degradation - s.mean) * (r.degradation - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(rows.size()));
    t.summary.push_back(std::move(s));
  }
  std::stable_sort(t.summary.begin(), t.summary.end(), [](const auto& a, const auto& b) {
    if (a.mean != b.mean) return a.mean < b.mean;
    return a.spec.key() < b.spec.key();
  });
  for (const auto& s : t.summary) {
    for (const auto& r : by_spec.at(s.spec)) t.rows.push_back(r);
  }
  return t;
}

inline std::string degradation_csv(const DegradationTable& t) {
  std::string out = "stack,dataset,accuracy,degradation,mean_degradation,std_degradation\n";
  std::map<std::string, const DegradationSummary*> summary;
  for (const auto& s : t.summary) summary[s.spec.key()] = &s;
  for (const auto& r : t.rows) {
    const auto* s = summary.at(r.spec.key());
    out += r.spec.key() + "," + r.dataset + "," + io::format_double(r.accuracy) + "," +
           io::format_double(r.degradation) + "," + io::format_double(s->mean) + "," + io::format_double(s->stddev) +
           "\n";
  }
  return out;
}

inline nlohmann::json to_json(const DegradationTable& t) {
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : t.summary) {
    summary.push_back({{"stack_spec", s.spec}, {"mean", s.mean}, {"std", s.stddev}, {"datasets", s.datasets}});
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back(
        {{"dataset", r.dataset}, {"stack_spec", r.spec}, {"accuracy", r.accuracy}, {"degradation", r.degradation}});
  }
  return nlohmann::json{{"summary", summary}, {"rows", rows}};
}

/// Reads {"datasets": {"<name>": [{"networks": [...], "accuracy": x}, ...]}}.
inline std::map<std::string, std::map<StackSpec, double>> results_from_json(const nlohmann::json& j) {
  std::map<std::string, std::map<StackSpec, double>> out;
  try {
    for (const auto& [dataset, entries] : j.at("datasets").items()) {
      for (const auto& e : entries) {
        out[dataset][StackSpec::make(e.at("networks").get<std::vector<std::string>>())] = e.at("accuracy").get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("results: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

enum class Format { json, csv };

inline Format parse_format(const std::string& s) {
  if (s == "json") return Format::json;
  if (s == "csv") return Format::csv;
  throw validation_error("format must be json or csv");
}

/// Writes a rendered report atomically.
inline void emit(const fs::path& path, const std::string& rendered) { io::write_file_atomic(path, rendered); }

inline void emit(const fs::path& path, const nlohmann::json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

}  // namespace snn
