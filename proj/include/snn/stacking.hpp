#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/error.hpp"
#include "snn/feature_store.hpp"

namespace snn {

/// Identifies one stacked network: a canonically sorted set of network ids,
/// optionally with one scalar weight per network.
class StackSpec {
 public:
  StackSpec() = default;

  /// Sorts ids (carrying weights along) and validates.
  static StackSpec make(std::vector<std::string> ids, std::optional<std::vector<double>> weights = std::nullopt) {
    if (ids.empty()) throw validation_error("no networks");
    if (weights && weights->size() != ids.size()) throw validation_error("weights length does not match networks");
    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
    StackSpec s;
    for (auto i : order) s.networks_.push_back(ids[i]);
    if (std::adjacent_find(s.networks_.begin(), s.networks_.end()) != s.networks_.end()) {
      throw validation_error("duplicate network id in stack");
    }
    if (weights) {
      std::vector<double> w;
      for (auto i : order) w.push_back((*weights)[i]);
      for (double v : w) {
        if (!(v > 0.0) || v > 1.0) throw validation_error("stack weights must lie in (0, 1]");
      }
      if (*std::max_element(w.begin(), w.end()) != 1.0) throw validation_error("largest stack weight must be 1");
      s.weights_ = std::move(w);
    }
    return s;
  }

  const std::vector<std::string>& networks() const { return networks_; }
  const std::optional<std::vector<double>>& weights() const { return weights_; }
  std::size_t size() const { return networks_.size(); }

  double weight(std::size_t i) const { return weights_ ? (*weights_)[i] : 1.0; }

  /// "A+B+C"; used as cache key and source tag.
  std::string key() const {
    std::string k;
    for (const auto& id : networks_) {
      if (!k.empty()) k += '+';
      k += id;
    }
    return k;
  }

  bool operator==(const StackSpec&) const = default;
  auto operator<=>(const StackSpec& o) const { return networks_ <=> o.networks_; }

 private:
  std::vector<std::string> networks_;
  std::optional<std::vector<double>> weights_;
};

// Serialized as {"networks": [...], "weights": [...]}; weights is null when
// the stack is unweighted.
inline void to_json(nlohmann::json& j, const StackSpec& s) {
  j = nlohmann::json{{"networks", s.networks()}};
  if (s.weights()) {
    j["weights"] = *s.weights();
  } else {
    j["weights"] = nullptr;
  }
}

inline void from_json(const nlohmann::json& j, StackSpec& s) {
  std::optional<std::vector<double>> w;
  if (j.contains("weights") && !j.at("weights").is_null()) w = j.at("weights").get<std::vector<double>>();
  s = StackSpec::make(j.at("networks").get<std::vector<std::string>>(), std::move(w));
}

inline constexpr double kZeroRowNorm = 1e-12;

/// Scales each row to unit Euclidean norm; rows with norm below 1e-12 become
/// all zeros.
inline FeatureMatrix l2_normalize_rows(const FeatureMatrix& m) {
  FeatureMatrix out = m;
  for (std::size_t i = 0; i < m.n(); ++i) {
    auto src = m.data.row(i);
    auto dst = out.data.row(i);
    double sq = 0.0;
    for (float v : src) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < src.size(); ++j) {
      dst[j] = norm < kZeroRowNorm ? 0.0f : static_cast<float>(src[j] / norm);
    }
  }
  return out;
}

/// Concatenates feature blocks in canonical (sorted network id) order,
/// scaling block i by weights[i]. Weights are matched to `matrices` by
/// position before sorting.
inline FeatureMatrix stack(const std::vector<FeatureMatrix>& matrices,
                           const std::optional<std::vector<double>>& weights = std::nullopt) {
  if (matrices.empty()) throw validation_error("no networks");
  if (weights && weights->size() != matrices.size()) throw validation_error("weights length does not match networks");
  const std::size_t n = matrices.front().n();
  for (const auto& m : matrices) {
    if (m.n() != n) throw validation_error("sample count mismatch");
  }
  std::vector<std::size_t> order(matrices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return matrices[a].network_id < matrices[b].network_id; });

  std::size_t d = 0;
  for (const auto& m : matrices) d += m.d();
  FeatureMatrix out;
  out.dataset_id = matrices.front().dataset_id;
  out.data = Matrix<float>(n, d);
  std::size_t offset = 0;
  for (auto k : order) {
    const auto& m = matrices[k];
    if (!out.network_id.empty()) out.network_id += '+';
    out.network_id += m.network_id;
    const double w = weights ? (*weights)[k] : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto src = m.data.row(i);
      auto dst = out.data.row(i).subspan(offset, m.d());
      if (w == 1.0) {
        std::copy(src.begin(), src.end(), dst.begin());
      } else {
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<float>(src[j] * w);
      }
    }
    offset += m.d();
  }
  return out;
}

/// Features of the stacked network `spec` over every sample of `bundle`.
/// Each block is optionally row-normalized first, then weighted.
inline FeatureMatrix stacked_features(const DatasetBundle& bundle, const StackSpec& spec, bool normalize = true) {
  std::vector<FeatureMatrix> blocks;
  for (const auto& id : spec.networks()) {
    const auto& m = bundle.network(id);
    blocks.push_back(normalize ? l2_normalize_rows(m) : m);
  }
  return stack(blocks, spec.weights());
}

inline constexpr std::size_t kMaxSubsetNetworks = 16;

/// All nonempty subsets, ordered by size and then lexicographically.
inline std::vector<StackSpec> enumerate_subsets(std::vector<std::string> ids) {
  if (ids.empty()) throw validation_error("no networks");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() > kMaxSubsetNetworks) throw validation_error("at most 16 networks can be enumerated");

  std::vector<std::vector<std::string>> subsets;
  const std::uint32_t count = 1u << ids.size();
  for (std::uint32_t mask = 1; mask < count; ++mask) {
    std::vector<std::string> s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (mask & (1u << i)) s.push_back(ids[i]);
    }
    subsets.push_back(std::move(s));
  }
  std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  std::vector<StackSpec> out;
  out.reserve(subsets.size());
  for (auto& s : subsets) out.push_back(StackSpec::make(std::move(s)));
  return out;
}

/// weight_i = accuracy_i / max accuracy.
inline std::map<std::string, double> accuracy_weights(const std::map<std::string, double>& accuracies) {
  if (accuracies.empty()) throw validation_error("no networks");
  double best = 0.0;
  for (const auto& [id, acc] : accuracies) {
    if (!(acc > 0.0) || !std::isfinite(acc)) throw validation_error("degenerate accuracy for '" + id + "'");
    best = std::max(best, acc);
  }
  std::map<std::string, double> out;
  for (const auto& [id, acc] : accuracies) out[id] = acc == best ? 1.0 : acc / best;
  return out;
}

/// StackSpec carrying accuracy-derived weights.
inline StackSpec weighted_stack(const std::map<std::string, double>& accuracies) {
  auto w = accuracy_weights(accuracies);
  std::vector<std::string> ids;
  std::vector<double> ws;
  for (const auto& [id, v] : w) {
    ids.push_back(id);
    ws.push_back(v);
  }
  return StackSpec::make(std::move(ids), std::move(ws));
}

}  // namespace snn
