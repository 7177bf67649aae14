#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/classifier.hpp"
#include "snn/io.hpp"
#include "snn/stacking.hpp"
#include "snn/sweep.hpp"

namespace snn {

struct ScoreMatrix {
  Matrix<double> scores;  // n x C
  std::string source;     // stack key + config id

  bool operator==(const ScoreMatrix&) const = default;
};

// Row-wise softmax.
inline Matrix<double> softmax_rows(const Matrix<double>& s) {
  Matrix<double> p(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto in = s.row(i);
    auto out = p.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) sum += out[j] = std::exp(in[j] - mx);
    for (auto& v : out) v /= sum;
  }
  return p;
}

/// Elementwise mean of the members, summed in ascending source-tag order so
/// the result does not depend on member order. With `probabilities` each
/// member is passed through a row softmax first.
///
/// Uses the running-mean update m += (x - m) / k, which returns a member
/// unchanged when all members are identical.
inline ScoreMatrix mean_scores(std::vector<ScoreMatrix> members, bool probabilities = false) {
  if (members.empty()) throw validation_error("empty ensemble");
  const auto rows = members.front().scores.rows();
  const auto cols = members.front().scores.cols();
  for (const auto& m : members) {
    if (m.scores.rows() != rows || m.scores.cols() != cols) throw validation_error("ensemble shape mismatch");
  }
  std::stable_sort(members.begin(), members.end(), [](const auto& a, const auto& b) { return a.source < b.source; });

  ScoreMatrix out;
  out.source = "mean(";
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto x = probabilities ? softmax_rows(members[k].scores) : members[k].scores;
    if (k == 0) {
      out.scores = x;
    } else {
      const double inv = 1.0 / static_cast<double>(k + 1);
      auto& m = out.scores.values();
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += (x.data()[i] - m[i]) * inv;
    }
    out.source += (k ? "," : "") + members[k].source;
  }
  out.source += ")";
  return out;
}

struct SubsetReport {
  StackSpec spec;
  std::size_t winner_config = 0;
  double accuracy = 0.0;
  double degradation = 0.0;  // best subset accuracy - accuracy
};

struct StackEnsembleResult {
  ScoreMatrix ensemble;
  double accuracy = 0.0;
  std::vector<SubsetReport> subsets;
};

/// Sweeps every nonempty subset of `network_ids`, takes each winner's
/// validation scores, and averages them.
inline StackEnsembleResult stack_ensemble(const DatasetBundle& bundle, const std::vector<std::string>& network_ids,
                                          const GridSpec& grid, std::size_t parallelism = 1,
                                          bool probabilities = false, bool normalize = true) {
  const auto subsets = enumerate_subsets(network_ids);
  const auto val_idx = bundle.indices(Split::val);
  const auto val_y = bundle.labels_of(val_idx);

  StackEnsembleResult r;
  std::vector<ScoreMatrix> members;
  for (const auto& spec : subsets) {
    const auto data = linear_data(bundle, spec, normalize);
    const auto sweep = run_sweep(data, spec, grid, parallelism, normalize);
    auto pred = predict(sweep.winner_model, data.val_x);
    r.subsets.push_back({spec, sweep.winner, accuracy(pred.labels, val_y), 0.0});
    members.push_back({std::move(pred.scores), spec.key() + "#" + std::to_string(sweep.winner)});
  }
  double best = 0.0;
  for (const auto& s : r.subsets) best = std::max(best, s.accuracy);
  for (auto& s : r.subsets) s.degradation = best - s.accuracy;

  r.ensemble = mean_scores(std::move(members), probabilities);
  r.accuracy = accuracy(argmax_rows(r.ensemble.scores), val_y);
  return r;
}

inline nlohmann::json to_json(const StackEnsembleResult& r) {
  nlohmann::json subsets = nlohmann::json::array();
  for (const auto& s : r.subsets) {
    subsets.push_back({{"stack_spec", s.spec},
                       {"winner_config", s.winner_config},
                       {"accuracy", s.accuracy},
                       {"degradation", s.degradation}});
  }
  return nlohmann::json{{"ensemble_accuracy", r.accuracy}, {"source", r.ensemble.source}, {"subsets", subsets}};
}

// One row per subset: accuracy and shortfall against the best subset.
inline std::string subsets_csv(const StackEnsembleResult& r) {
  std::string out = "stack,networks,accuracy,degradation\n";
  for (const auto& s : r.subsets) {
    out += s.spec.key() + "," + std::to_string(s.spec.size()) + "," + io::format_double(s.accuracy) + "," +
           io::format_double(s.degradation) + "\n";
  }
  out += "ensemble," + std::to_string(r.subsets.empty() ? 0 : r.subsets.back().spec.size()) + "," +
         io::format_double(r.accuracy) + ",\n";
  return out;
}

}  // namespace snn
