#pragma once

// Linear classifier head: optional inverted dropout, affine layer, and a
// multiclass hinge (Weston-Watkins) or softmax loss, trained with minibatch
// SGD, L2 on the weights, and exponential learning-rate decay.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/error.hpp"
#include "snn/io.hpp"
#include "snn/matrix.hpp"
#include "snn/rng.hpp"
#include "snn/stacking.hpp"

namespace snn {

enum class LossKind { svm, softmax };

NLOHMANN_JSON_SERIALIZE_ENUM(LossKind, {{LossKind::svm, "svm"}, {LossKind::softmax, "softmax"}})

struct TrainConfig {
  double lr0 = 1e-2;
  double reg = 0.1;
  std::size_t epochs = 300;
  double decay = 0.98;
  std::size_t batch_size = 128;
  double dropout_p = 0.5;
  bool dropout_enabled = false;
  LossKind loss_kind = LossKind::svm;
  std::uint64_t seed = 0;

  void validate(bool allow_zero_epochs = false) const {
    if (!(lr0 > 0) || !std::isfinite(lr0)) throw validation_error("learning rate must be > 0");
    if (!(reg >= 0) || !std::isfinite(reg)) throw validation_error("regularization must be >= 0");
    if (epochs == 0 && !allow_zero_epochs) throw validation_error("epochs must be >= 1");
    if (!(decay > 0) || decay > 1) throw validation_error("decay must lie in (0, 1]");
    if (batch_size == 0) throw validation_error("batch size must be >= 1");
    if (!(dropout_p >= 0) || !(dropout_p < 1)) throw validation_error("dropout probability must lie in [0, 1)");
  }

  double lr_at(std::size_t epoch) const { return lr0 * std::pow(decay, static_cast<double>(epoch)); }

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr0", c.lr0},
                     {"reg", c.reg},
                     {"epochs", c.epochs},
                     {"decay", c.decay},
                     {"batch_size", c.batch_size},
                     {"dropout_p", c.dropout_p},
                     {"dropout_enabled", c.dropout_enabled},
                     {"loss_kind", c.loss_kind},
                     {"seed", c.seed}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  io::get_optional(j, "lr0", c.lr0);
  io::get_optional(j, "reg", c.reg);
  io::get_optional(j, "epochs", c.epochs);
  io::get_optional(j, "decay", c.decay);
  io::get_optional(j, "batch_size", c.batch_size);
  io::get_optional(j, "dropout_p", c.dropout_p);
  io::get_optional(j, "dropout_enabled", c.dropout_enabled);
  io::get_optional(j, "loss_kind", c.loss_kind);
  io::get_optional(j, "seed", c.seed);
}

struct EpochRecord {
  double train_loss = 0;
  double val_accuracy = 0;
  double lr = 0;
  bool operator==(const EpochRecord&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochRecord, train_loss, val_accuracy, lr)

struct TrainedModel {
  Matrix<double> W;  // C x D
  std::vector<double> b;
  StackSpec stack_spec;
  bool normalized = true;
  TrainConfig config;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;

  std::size_t num_classes() const { return W.rows(); }
  std::size_t dim() const { return W.cols(); }

  bool operator==(const TrainedModel&) const = default;
};

/// Train/val features and labels for one linear problem.
struct LinearData {
  Matrix<float> train_x;
  std::vector<std::uint32_t> train_y;
  Matrix<float> val_x;
  std::vector<std::uint32_t> val_y;
  std::size_t num_classes = 0;

  void validate() const {
    if (train_x.rows() == 0 || val_x.rows() == 0) throw validation_error("train and val splits must be nonempty");
    if (train_x.rows() != train_y.size() || val_x.rows() != val_y.size()) {
      throw validation_error("sample count mismatch between features and labels");
    }
    if (train_x.cols() != val_x.cols()) throw validation_error("train and val feature dimensions differ");
    if (num_classes < 2) throw validation_error("need at least two classes");
    for (auto y : train_y) {
      if (y >= num_classes) throw validation_error("label out of range");
    }
    for (auto y : val_y) {
      if (y >= num_classes) throw validation_error("label out of range");
    }
  }
};

/// Splits the stacked features of `spec` into train/val by the bundle's tags.
inline LinearData linear_data(const DatasetBundle& bundle, const StackSpec& spec, bool normalize = true) {
  auto x = stacked_features(bundle, spec, normalize);
  auto tr = bundle.indices(Split::train);
  auto va = bundle.indices(Split::val);
  LinearData data;
  data.train_x = select_rows<float>(x.data, tr);
  data.train_y = bundle.labels_of(tr);
  data.val_x = select_rows<float>(x.data, va);
  data.val_y = bundle.labels_of(va);
  data.num_classes = bundle.num_classes();
  return data;
}

// ---------------------------------------------------------------------------
// Forward / backward kernels

/// scores(i, j) = W_j . X_i + b_j
template <typename Real, typename XT>
Matrix<Real> affine_scores(const Matrix<XT>& X, const Matrix<Real>& W, std::span<const Real> b) {
  if (X.cols() != W.cols() || b.size() != W.rows()) throw validation_error("affine shape mismatch");
  Matrix<Real> scores(X.rows(), W.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto x = X.row(i);
    for (std::size_t c = 0; c < W.rows(); ++c) {
      auto w = W.row(c);
      Real acc = b[c];
      for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * static_cast<Real>(x[k]);
      scores(i, c) = acc;
    }
  }
  return scores;
}

template <typename Real>
struct LossGrad {
  Real loss{};
  Matrix<Real> dscores;
};

template <typename Real>
void check_labels(const Matrix<Real>& scores, std::span<const std::uint32_t> y) {
  if (y.size() != scores.rows()) throw validation_error("label count does not match scores");
  for (auto label : y) {
    if (label >= scores.cols()) throw validation_error("label out of range");
  }
}

/// Multiclass hinge: (1/n) sum_i sum_{j != y_i} max(0, s_ij - s_iy + margin).
template <typename Real>
LossGrad<Real> svm_loss_grad(const Matrix<Real>& scores, std::span<const std::uint32_t> y, Real margin = 1) {
  check_labels(scores, y);
  const std::size_t n = scores.rows();
  LossGrad<Real> out{Real{}, Matrix<Real>(n, scores.cols())};
  if (n == 0) return out;
  const Real inv_n = Real{1} / static_cast<Real>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = scores.row(i);
    auto ds = out.dscores.row(i);
    const Real correct = s[y[i]];
    std::size_t active = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j == y[i]) continue;
      const Real m = s[j] - correct + margin;
      if (m > 0) {
        out.loss += m;
        ds[j] = inv_n;
        ++active;
      }
    }
    ds[y[i]] = -static_cast<Real>(active) * inv_n;
  }
  out.loss *= inv_n;
  return out;
}

/// Mean cross-entropy of the row-wise softmax, shift-stabilized.
template <typename Real>
LossGrad<Real> softmax_loss_grad(const Matrix<Real>& scores, std::span<const std::uint32_t> y) {
  check_labels(scores, y);
  const std::size_t n = scores.rows();
  LossGrad<Real> out{Real{}, Matrix<Real>(n, scores.cols())};
  if (n == 0) return out;
  const Real inv_n = Real{1} / static_cast<Real>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = scores.row(i);
    auto ds = out.dscores.row(i);
    const Real mx = *std::max_element(s.begin(), s.end());
    Real sum{};
    for (std::size_t j = 0; j < s.size(); ++j) {
      ds[j] = std::exp(s[j] - mx);
      sum += ds[j];
    }
    out.loss += std::log(sum) - (s[y[i]] - mx);
    for (std::size_t j = 0; j < s.size(); ++j) ds[j] = ds[j] / sum * inv_n;
    ds[y[i]] -= inv_n;
  }
  out.loss *= inv_n;
  return out;
}

template <typename Real>
LossGrad<Real> loss_grad(LossKind kind, const Matrix<Real>& scores, std::span<const std::uint32_t> y) {
  return kind == LossKind::svm ? svm_loss_grad(scores, y) : softmax_loss_grad(scores, y);
}

enum class Mode { train, test };

template <typename Real>
struct DropoutResult {
  Matrix<Real> output;
  Matrix<Real> mask;
};

/// Inverted dropout: in train mode each mask entry is 0 with probability p,
/// otherwise 1/(1-p). Test mode is the identity.
template <typename Real>
DropoutResult<Real> dropout_apply(const Matrix<Real>& X, double p, Mode mode, Rng& rng) {
  if (!(p >= 0) || !(p < 1)) throw validation_error("dropout probability must lie in [0, 1)");
  DropoutResult<Real> r{X, Matrix<Real>(X.rows(), X.cols(), Real{1})};
  if (mode == Mode::test || p == 0.0) return r;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < X.size(); ++i) {
    const Real m = rng.uniform() < p ? Real{0} : keep_scale;
    r.mask.data()[i] = m;
    r.output.data()[i] = X.data()[i] * m;
  }
  return r;
}

/// Central-difference gradient check. Returns the max over coordinates of
/// |a - n| / max(|a|, |n|, 1e-8). The differences are taken in Real, which
/// may be wider than the analytic gradient's type A: with the 1e-8 floor,
/// 64-bit round-off alone (~1e-16 |f| / eps) can swamp entries that cancel to
/// exactly zero, so 64-bit gradients are best checked against long double.
template <typename Real, typename A, typename F>
Real grad_check(F&& f, std::vector<Real> params, std::span<const A> analytic, Real eps) {
  if (!(eps > 0)) throw validation_error("epsilon must be > 0");
  if (analytic.size() != params.size()) throw validation_error("gradient size does not match parameters");
  Real worst{};
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real saved = params[i];
    params[i] = saved + eps;
    const Real plus = f(std::as_const(params));
    params[i] = saved - eps;
    const Real minus = f(std::as_const(params));
    params[i] = saved;
    const Real numeric = (plus - minus) / (2 * eps);
    const Real a = static_cast<Real>(analytic[i]);
    const Real denom = std::max({std::abs(a), std::abs(numeric), Real(1e-8)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
  Matrix<double> scores;
  std::vector<std::uint32_t> labels;
};

// argmax per row, ties to the lowest class index.
template <typename Real>
std::vector<std::uint32_t> argmax_rows(const Matrix<Real>& scores) {
  std::vector<std::uint32_t> out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto s = scores.row(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(s.begin(), s.end()) - s.begin());
  }
  return out;
}

inline double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> labels) {
  if (predicted.size() != labels.size()) throw validation_error("length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

template <typename XT>
Prediction predict(const TrainedModel& model, const Matrix<XT>& X) {
  if (X.cols() != model.dim()) {
    throw validation_error("dimension mismatch: model expects " + std::to_string(model.dim()) + " features, got " +
                           std::to_string(X.cols()));
  }
  Prediction p;
  p.scores = affine_scores(X, model.W, std::span<const double>(model.b));
  p.labels = argmax_rows(p.scores);
  return p;
}

// ---------------------------------------------------------------------------
// Training

/// Minibatch SGD on data loss + 0.5 * reg * ||W||^2. The returned parameters
/// are those of the epoch with the best validation accuracy (earliest on
/// ties). Fully determined by (data, config).
inline TrainedModel train_linear(const LinearData& data, const TrainConfig& config) {
  data.validate();
  config.validate();
  const std::size_t C = data.num_classes;
  const std::size_t D = data.train_x.cols();
  const std::size_t n = data.train_x.rows();

  Rng rng(config.seed);
  Matrix<double> W(C, D);
  for (auto& w : W.values()) w = 1e-3 * rng.normal();
  std::vector<double> b(C, 0.0);

  TrainedModel best;
  best.config = config;
  double best_acc = -1.0;
  std::vector<EpochRecord> history;
  history.reserve(config.epochs);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Matrix<double> dW(C, D);
  std::vector<double> db(C);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix<double> xb = select_rows<double>(data.train_x, idx);
      std::vector<std::uint32_t> yb;
      yb.reserve(idx.size());
      for (auto i : idx) yb.push_back(data.train_y[i]);
      if (config.dropout_enabled) xb = dropout_apply(xb, config.dropout_p, Mode::train, rng).output;

      const auto scores = affine_scores(xb, W, std::span<const double>(b));
      const auto lg = loss_grad(config.loss_kind, scores, yb);
      loss_sum += lg.loss + 0.5 * config.reg * squared_norm(W);
      ++batches;

      // dW = dscores^T X + reg W ; db = column sums of dscores
      for (std::size_t c = 0; c < C; ++c) {
        auto g = dW.row(c);
        auto w = W.row(c);
        for (std::size_t k = 0; k < D; ++k) g[k] = config.reg * w[k];
        db[c] = 0.0;
      }
      for (std::size_t i = 0; i < xb.rows(); ++i) {
        auto x = xb.row(i);
        auto ds = lg.dscores.row(i);
        for (std::size_t c = 0; c < C; ++c) {
          if (ds[c] == 0.0) continue;
          auto g = dW.row(c);
          for (std::size_t k = 0; k < D; ++k) g[k] += ds[c] * x[k];
          db[c] += ds[c];
        }
      }
      for (std::size_t i = 0; i < W.size(); ++i) W.data()[i] -= lr * dW.data()[i];
      for (std::size_t c = 0; c < C; ++c) b[c] -= lr * db[c];
    }
    const double train_loss = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(train_loss)) throw validation_error("diverged at epoch " + std::to_string(epoch));

    const auto val_pred = argmax_rows(affine_scores(data.val_x, W, std::span<const double>(b)));
    const double val_acc = accuracy(val_pred, data.val_y);
    history.push_back({train_loss, val_acc, lr});
    if (val_acc > best_acc) {
      best_acc = val_acc;
      best.W = W;
      best.b = b;
      best.best_epoch = epoch;
    }
  }
  best.history = std::move(history);
  return best;
}

// ---------------------------------------------------------------------------
// Model files
//
// Binary blob: 8-byte magic "SNNMDL1\0", u32 C, u32 D, C*D f64 weights
// row-major, C f64 biases (little-endian). A JSON sidecar at <path>.json
// carries the config, stack spec, normalization flag, best epoch and history.

inline constexpr char kModelMagic[8] = {'S', 'N', 'N', 'M', 'D', 'L', '1', '\0'};

inline std::string encode_model_blob(const TrainedModel& m) {
  std::string out(kModelMagic, sizeof kModelMagic);
  io::put_u32(out, static_cast<std::uint32_t>(m.W.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(m.W.cols()));
  for (double v : m.W.values()) io::put_f64(out, v);
  for (double v : m.b) io::put_f64(out, v);
  return out;
}

inline nlohmann::json model_sidecar(const TrainedModel& m) {
  return nlohmann::json{{"format", "SNNMDL1"},
                        {"config", m.config},
                        {"stack_spec", m.stack_spec},
                        {"normalized", m.normalized},
                        {"best_epoch", m.best_epoch},
                        {"history", m.history}};
}

inline void save_model(const TrainedModel& m, const fs::path& path) {
  io::write_file_atomic(path, encode_model_blob(m));
  fs::path sidecar = path;
  sidecar += ".json";
  io::write_file_atomic(sidecar, model_sidecar(m).dump(2) + "\n");
}

inline TrainedModel load_model(const fs::path& path) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() < sizeof kModelMagic || !std::equal(std::begin(kModelMagic), std::end(kModelMagic), bytes.begin())) {
    throw validation_error("not a model file: " + path.string());
  }
  io::ByteReader r(std::string_view(bytes).substr(sizeof kModelMagic), "corrupt model file: " + path.string());
  TrainedModel m;
  const std::uint32_t C = r.u32();
  const std::uint32_t D = r.u32();
  if (r.remaining() != 8 * (std::uint64_t{C} * D + C)) throw validation_error("corrupt model file: " + path.string());
  m.W = Matrix<double>(C, D);
  for (auto& v : m.W.values()) v = r.f64();
  m.b.resize(C);
  for (auto& v : m.b) v = r.f64();
  for (double v : m.W.values()) {
    if (!std::isfinite(v)) throw validation_error("corrupt model file: non-finite weight");
  }

  fs::path sidecar = path;
  sidecar += ".json";
  try {
    auto j = nlohmann::json::parse(io::read_file(sidecar));
    m.config = j.at("config").get<TrainConfig>();
    if (!j.at("stack_spec").at("networks").empty()) m.stack_spec = j.at("stack_spec").get<StackSpec>();
    m.normalized = j.at("normalized").get<bool>();
    m.best_epoch = j.at("best_epoch").get<std::size_t>();
    m.history = j.at("history").get<std::vector<EpochRecord>>();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("corrupt model sidecar " + sidecar.string() + ": " + e.what());
  }
  return m;
}

}  // namespace snn
