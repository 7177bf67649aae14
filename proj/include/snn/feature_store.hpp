#pragma once

// Per-network feature matrices, dataset bundles, and synthetic generators.
//
// Feature file layout (all integers little-endian):
//   8 bytes   magic "SNNFEAT1"
//   u32 n, u32 d
//   u32 len + UTF-8 network_id
//   u32 len + UTF-8 dataset_id
//   n*d IEEE-754 binary32, row-major

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/error.hpp"
#include "snn/io.hpp"
#include "snn/matrix.hpp"
#include "snn/rng.hpp"

namespace snn {

namespace fs = std::filesystem;

inline constexpr char kFeatureMagic[8] = {'S', 'N', 'N', 'F', 'E', 'A', 'T', '1'};

struct FeatureMatrix {
  std::string network_id;
  std::string dataset_id;
  Matrix<float> data;

  std::size_t n() const { return data.rows(); }
  std::size_t d() const { return data.cols(); }

  void validate() const {
    if (n() == 0 || d() == 0) throw validation_error("feature matrix must have n >= 1 and d >= 1");
    for (float v : data.values()) {
      if (!std::isfinite(v)) throw validation_error("feature matrix '" + network_id + "' has a non-finite value");
    }
  }

  bool operator==(const FeatureMatrix&) const = default;
};

enum class Split : std::uint8_t { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw validation_error("unknown split tag '" + s + "'");
}

struct DatasetBundle {
  std::string dataset_id;
  std::vector<std::string> class_names;
  std::vector<std::uint32_t> labels;
  std::vector<Split> splits;
  std::map<std::string, FeatureMatrix> features;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t n() const { return labels.size(); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
      if (splits[i] == s) out.push_back(i);
    }
    return out;
  }

  std::vector<std::uint32_t> labels_of(std::span<const std::size_t> idx) const {
    std::vector<std::uint32_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  }

  const FeatureMatrix& network(const std::string& id) const {
    auto it = features.find(id);
    if (it == features.end()) throw validation_error("bundle '" + dataset_id + "' has no network '" + id + "'");
    return it->second;
  }

  void validate() const {
    if (class_names.empty()) throw validation_error("bundle has no classes");
    if (labels.empty()) throw validation_error("bundle has no samples");
    if (splits.size() != labels.size()) throw validation_error("inconsistent sample count: splits vs labels");
    for (auto y : labels) {
      if (y >= class_names.size()) {
        throw validation_error("label out of range: " + std::to_string(y) + " >= " +
                               std::to_string(class_names.size()));
      }
    }
    for (const auto& [id, m] : features) {
      if (m.n() != labels.size()) {
        throw validation_error("inconsistent sample count: network '" + id + "' has n=" + std::to_string(m.n()) +
                               ", labels have " + std::to_string(labels.size()));
      }
      m.validate();
    }
    if (indices(Split::train).empty()) throw validation_error("train split is empty");
    if (indices(Split::val).empty()) throw validation_error("val split is empty");
  }
};

// ---------------------------------------------------------------------------
// Feature files

inline std::string encode_feature_file(const FeatureMatrix& m) {
  std::string out(kFeatureMagic, sizeof kFeatureMagic);
  io::put_u32(out, static_cast<std::uint32_t>(m.n()));
  io::put_u32(out, static_cast<std::uint32_t>(m.d()));
  io::put_string(out, m.network_id);
  io::put_string(out, m.dataset_id);
  out.reserve(out.size() + 4 * m.data.size());
  for (float v : m.data.values()) io::put_f32(out, v);
  return out;
}

inline FeatureMatrix decode_feature_file(std::string_view bytes) {
  if (bytes.size() < sizeof kFeatureMagic ||
      !std::equal(std::begin(kFeatureMagic), std::end(kFeatureMagic), bytes.begin())) {
    throw validation_error("not a feature file");
  }
  io::ByteReader r(bytes.substr(sizeof kFeatureMagic), "corrupt feature file: truncated");
  FeatureMatrix m;
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  m.network_id = r.string();
  m.dataset_id = r.string();
  if (n == 0 || d == 0) throw validation_error("corrupt feature file: empty shape");
  const std::uint64_t count = std::uint64_t{n} * d;
  if (r.remaining() != 4 * count) {
    throw validation_error(r.remaining() < 4 * count ? "corrupt feature file: truncated"
                                                     : "corrupt feature file: trailing bytes");
  }
  m.data = Matrix<float>(n, d);
  for (auto& v : m.data.values()) {
    v = r.f32();
    if (!std::isfinite(v)) throw validation_error("corrupt feature file: non-finite value");
  }
  return m;
}

inline void write_feature_file(const FeatureMatrix& m, const fs::path& path) {
  m.validate();
  io::write_file_atomic(path, encode_feature_file(m));
}

inline FeatureMatrix read_feature_file(const fs::path& path) {
  try {
    return decode_feature_file(io::read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::io) throw;
    throw validation_error(std::string(e.what()) + " (" + path.string() + ")");
  }
}

/// CSV ingestion: header row f0..f{d-1}, one sample per line.
inline FeatureMatrix read_feature_csv(const fs::path& path, std::string network_id, std::string dataset_id) {
  auto table = io::read_csv(path);
  const std::size_t d = table.header.size();
  for (std::size_t j = 0; j < d; ++j) {
    if (table.header[j] != "f" + std::to_string(j)) {
      throw validation_error(path.string() + ": expected header column f" + std::to_string(j));
    }
  }
  FeatureMatrix m{std::move(network_id), std::move(dataset_id), Matrix<float>(table.rows.size(), d)};
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i].size() != d) throw validation_error(path.string() + ": ragged row " + std::to_string(i + 1));
    for (std::size_t j = 0; j < d; ++j) {
      m.data(i, j) = static_cast<float>(io::parse_double(table.rows[i][j], path.string()));
    }
  }
  m.validate();
  return m;
}

inline FeatureMatrix read_features_any(const fs::path& path, const std::string& network_id,
                                       const std::string& dataset_id) {
  if (path.extension() == ".csv") return read_feature_csv(path, network_id, dataset_id);
  auto m = read_feature_file(path);
  // The manifest key is authoritative for the network name.
  m.network_id = network_id;
  return m;
}

// ---------------------------------------------------------------------------
// Stratified split

/// Assigns train/val/test tags per class so each class's proportions match
/// `fractions` up to rounding. Every part with a nonzero fraction receives at
/// least one sample of every class.
inline std::vector<Split> stratified_split(std::span<const std::uint32_t> labels, std::array<double, 3> fractions,
                                           std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw validation_error("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw validation_error("split fractions must sum to 1");
  const int parts = static_cast<int>(std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0; }));

  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  std::vector<Split> tags(labels.size(), Split::train);
  for (auto& [cls, idx] : by_class) {
    const std::size_t m = idx.size();
    if (m < static_cast<std::size_t>(parts)) {
      throw validation_error("class too small: class " + std::to_string(cls) + " has " + std::to_string(m) +
                             " samples for " + std::to_string(parts) + " split parts");
    }
    std::array<std::size_t, 3> counts{};
    for (int k = 0; k < 3; ++k) counts[k] = static_cast<std::size_t>(std::floor(fractions[k] * m + 0.5));
    for (int k = 0; k < 3; ++k) {
      if (fractions[k] == 0.0) counts[k] = 0;
    }
    // Fix rounding overshoot/undershoot against the largest part.
    auto total = [&] { return counts[0] + counts[1] + counts[2]; };
    while (total() > m) --counts[std::max_element(counts.begin(), counts.end()) - counts.begin()];
    while (total() < m) {
      std::size_t k = std::max_element(fractions.begin(), fractions.end()) - fractions.begin();
      ++counts[k];
    }
    for (int k = 0; k < 3; ++k) {
      if (fractions[k] > 0 && counts[k] == 0) {
        ++counts[k];
        --counts[std::max_element(counts.begin(), counts.end()) - counts.begin()];
      }
    }

    Rng rng(derive_seed(seed, cls));
    rng.shuffle(std::span<std::size_t>(idx));
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t c = 0; c < counts[k]; ++c) tags[idx[pos++]] = static_cast<Split>(k);
    }
  }
  return tags;
}

inline constexpr std::array<double, 3> kDefaultSplit = {0.6, 0.2, 0.2};

// ---------------------------------------------------------------------------
// Manifest bundles
//
// {
//   "dataset_id": "...",
//   "class_names": ["a", "b"],
//   "labels": "labels.csv",      header "label", one class index per line
//   "splits": "splits.csv",      header "split", train|val|test per line
//   "networks": {"NIN": "NIN.snnf", "VGG16": "VGG16.csv"}
// }
// Relative paths resolve against the manifest's directory.

inline DatasetBundle load_bundle(const fs::path& manifest_path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  DatasetBundle b;
  try {
    b.dataset_id = manifest.at("dataset_id").get<std::string>();
    b.class_names = manifest.at("class_names").get<std::vector<std::string>>();

    auto labels = io::read_csv(resolve(manifest.at("labels").get<std::string>()));
    for (const auto& row : labels.rows) {
      auto v = io::parse_int(row.at(0), "labels");
      if (v < 0) throw validation_error("label out of range: " + row.at(0));
      if (static_cast<std::size_t>(v) >= b.class_names.size()) {
        throw validation_error("label out of range: " + row.at(0) + " >= " + std::to_string(b.class_names.size()));
      }
      b.labels.push_back(static_cast<std::uint32_t>(v));
    }
    auto splits = io::read_csv(resolve(manifest.at("splits").get<std::string>()));
    for (const auto& row : splits.rows) b.splits.push_back(parse_split(row.at(0)));

    for (const auto& [id, path] : manifest.at("networks").items()) {
      b.features.emplace(id, read_features_any(resolve(path.get<std::string>()), id, b.dataset_id));
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("manifest " + manifest_path.string() + ": " + e.what());
  }
  if (b.splits.size() != b.labels.size()) {
    throw validation_error("inconsistent sample count: " + std::to_string(b.splits.size()) + " split tags vs " +
                           std::to_string(b.labels.size()) + " labels");
  }
  b.validate();
  return b;
}

/// Writes feature files, labels, splits and manifest.json into `dir`.
inline fs::path write_bundle(const DatasetBundle& b, const fs::path& dir) {
  b.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory " + dir.string());

  std::string labels = "label\n";
  for (auto y : b.labels) labels += std::to_string(y) + "\n";
  io::write_file_atomic(dir / "labels.csv", labels);
  std::string splits = "split\n";
  for (auto s : b.splits) splits += std::string(to_string(s)) + "\n";
  io::write_file_atomic(dir / "splits.csv", splits);

  nlohmann::ordered_json manifest;
  manifest["dataset_id"] = b.dataset_id;
  manifest["class_names"] = b.class_names;
  manifest["labels"] = "labels.csv";
  manifest["splits"] = "splits.csv";
  manifest["networks"] = nlohmann::ordered_json::object();
  for (const auto& [id, m] : b.features) {
    const std::string file = id + ".snnf";
    write_feature_file(m, dir / file);
    manifest["networks"][id] = file;
  }
  const fs::path manifest_path = dir / "manifest.json";
  io::write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Synthetic partition bundles

struct SynthSpec {
  std::string dataset_id = "synthetic";
  std::size_t num_classes = 4;
  // network id -> groups of classes; a network's features depend only on the
  // group a sample's class falls in.
  std::map<std::string, std::vector<std::vector<std::uint32_t>>> partitions;
  std::size_t dims_per_network = 8;
  std::size_t samples_per_class = 50;
  double cluster_separation = 5.0;
  double noise_sigma = 1.0;

  void validate() const {
    if (num_classes == 0) throw validation_error("synthetic spec needs at least one class");
    if (partitions.empty()) throw validation_error("synthetic spec needs at least one network");
    if (!(cluster_separation > 0)) throw validation_error("cluster separation must be > 0");
    if (!(noise_sigma > 0)) throw validation_error("noise sigma must be > 0");
    if (samples_per_class == 0) throw validation_error("samples_per_class must be >= 1");
    for (const auto& [id, groups] : partitions) {
      std::vector<int> seen(num_classes, 0);
      for (const auto& g : groups) {
        for (auto c : g) {
          if (c >= num_classes) throw validation_error("partition of '" + id + "' names class out of range");
          ++seen[c];
        }
      }
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (seen[c] != 1) {
          throw validation_error("partition of '" + id + "' must cover every class exactly once");
        }
      }
      if (dims_per_network < (groups.size() + 1) / 2) {
        throw validation_error("dims_per_network too small for the number of groups");
      }
    }
  }
};

/// Four classes, two networks with complementary two-group partitions:
/// A = {{0,1},{2,3}}, B = {{0,2},{1,3}}. Either network alone recovers one
/// bit of the class; both together recover the class.
inline SynthSpec complementary_spec() {
  SynthSpec s;
  s.dataset_id = "complementary";
  s.num_classes = 4;
  s.partitions["A"] = {{0, 1}, {2, 3}};
  s.partitions["B"] = {{0, 2}, {1, 3}};
  return s;
}

// Group g sits on axis g/2 at -sep/2 (even g) or +sep/2 (odd g).
inline std::vector<double> group_mean(std::size_t group, std::size_t dims, double separation) {
  std::vector<double> mean(dims, 0.0);
  mean[(group / 2) % dims] = (group % 2 == 0 ? -0.5 : 0.5) * separation;
  return mean;
}

inline DatasetBundle generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  DatasetBundle b;
  b.dataset_id = spec.dataset_id;
  for (std::size_t c = 0; c < spec.num_classes; ++c) b.class_names.push_back("class" + std::to_string(c));
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t k = 0; k < spec.samples_per_class; ++k) b.labels.push_back(c);
  }
  const std::size_t n = b.labels.size();

  for (const auto& [id, groups] : spec.partitions) {
    std::vector<std::size_t> group_of(spec.num_classes);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (auto c : groups[g]) group_of[c] = g;
    }
    Rng rng(derive_seed(seed, "network:" + id));
    FeatureMatrix m{id, spec.dataset_id, Matrix<float>(n, spec.dims_per_network)};
    for (std::size_t i = 0; i < n; ++i) {
      auto mean = group_mean(group_of[b.labels[i]], spec.dims_per_network, spec.cluster_separation);
      for (std::size_t j = 0; j < spec.dims_per_network; ++j) {
        m.data(i, j) = static_cast<float>(rng.normal(mean[j], spec.noise_sigma));
      }
    }
    b.features.emplace(id, std::move(m));
  }
  b.splits = stratified_split(b.labels, kDefaultSplit, derive_seed(seed, "split"));
  return b;
}

// ---------------------------------------------------------------------------
// Latent-concept tasks
//
// Every task lives in one shared latent space of binary concepts. A sample's
// latent vector z has K coordinates z_k = s_k * (margin + |g_k|) with random
// signs s_k and g_k ~ N(0,1). The input is x = Q z + sigma * e where Q is a
// fixed random p x K matrix with orthonormal columns. A task's class is the
// bit pattern of the signs of its chosen concepts, giving 2^|concepts|
// classes; concepts not used by the task remain random nuisance.

struct ConceptTask {
  std::string id;
  std::vector<std::size_t> concepts;
  std::size_t samples_per_class = 100;
};

struct ConceptSpec {
  std::size_t latent_dim = 6;
  std::size_t input_dim = 12;
  double margin = 0.5;
  double noise_sigma = 0.3;
  std::vector<ConceptTask> tasks;

  void validate() const {
    if (latent_dim == 0 || input_dim < latent_dim) throw validation_error("concept spec needs 0 < latent_dim <= input_dim");
    if (!(noise_sigma > 0)) throw validation_error("noise sigma must be > 0");
    if (margin < 0) throw validation_error("margin must be >= 0");
    std::set<std::string> ids;
    for (const auto& t : tasks) {
      if (!ids.insert(t.id).second) throw validation_error("duplicate task id '" + t.id + "'");
      if (t.concepts.empty() || t.concepts.size() > 12) throw validation_error("task '" + t.id + "' needs 1..12 concepts");
      for (auto k : t.concepts) {
        if (k >= latent_dim) throw validation_error("task '" + t.id + "' names a concept out of range");
      }
      if (t.samples_per_class < 3) throw validation_error("task '" + t.id + "' needs >= 3 samples per class");
    }
  }
};

// Random p x K matrix with orthonormal columns (modified Gram-Schmidt).
inline Matrix<double> concept_mixing(std::size_t p, std::size_t k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "mixing"));
  Matrix<double> q(p, k);
  for (auto& v : q.values()) v = rng.normal();
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0;
      for (std::size_t r = 0; r < p; ++r) dot += q(r, c) * q(r, prev);
      for (std::size_t r = 0; r < p; ++r) q(r, c) -= dot * q(r, prev);
    }
    double norm = 0;
    for (std::size_t r = 0; r < p; ++r) norm += q(r, c) * q(r, c);
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < p; ++r) q(r, c) /= norm;
  }
  return q;
}

/// One single-network bundle (network id "input") per task, all sharing the
/// same latent space and mixing matrix.
inline std::map<std::string, DatasetBundle> generate_concept_tasks(const ConceptSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto q = concept_mixing(spec.input_dim, spec.latent_dim, seed);
  std::map<std::string, DatasetBundle> out;
  for (const auto& task : spec.tasks) {
    const std::size_t classes = std::size_t{1} << task.concepts.size();
    DatasetBundle b;
    b.dataset_id = task.id;
    for (std::size_t c = 0; c < classes; ++c) b.class_names.push_back(task.id + std::to_string(c));
    const std::size_t n = classes * task.samples_per_class;
    FeatureMatrix m{"input", task.id, Matrix<float>(n, spec.input_dim)};
    Rng rng(derive_seed(seed, "task:" + task.id));
    std::vector<double> z(spec.latent_dim);
    std::size_t i = 0;
    for (std::uint32_t c = 0; c < classes; ++c) {
      for (std::size_t s = 0; s < task.samples_per_class; ++s, ++i) {
        for (auto& zk : z) zk = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (spec.margin + std::abs(rng.normal()));
        for (std::size_t bit = 0; bit < task.concepts.size(); ++bit) {
          const double mag = std::abs(z[task.concepts[bit]]);
          z[task.concepts[bit]] = ((c >> bit) & 1u) ? mag : -mag;
        }
        for (std::size_t r = 0; r < spec.input_dim; ++r) {
          double x = 0;
          for (std::size_t k = 0; k < spec.latent_dim; ++k) x += q(r, k) * z[k];
          m.data(i, r) = static_cast<float>(x + spec.noise_sigma * rng.normal());
        }
        b.labels.push_back(c);
      }
    }
    b.features.emplace("input", std::move(m));
    b.splits = stratified_split(b.labels, kDefaultSplit, derive_seed(seed, "split:" + task.id));
    out.emplace(task.id, std::move(b));
  }
  return out;
}

}  // namespace snn
