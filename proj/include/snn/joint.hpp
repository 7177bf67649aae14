#pragma once

// Shared rectifier MLP trunk with one affine softmax head per task, trained
// on mixed minibatches (an equal share of every task per batch) with the sum
// of per-task losses. Frozen trunks are evaluated by training a linear SVM
// head on their features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/classifier.hpp"
#include "snn/error.hpp"
#include "snn/feature_store.hpp"
#include "snn/matrix.hpp"
#include "snn/rng.hpp"
#include "snn/stacking.hpp"
#include "snn/sweep.hpp"

namespace snn {

template <typename Real>
struct DenseLayer {
  Matrix<Real> W;  // out x in
  std::vector<Real> b;

  std::size_t in() const { return W.cols(); }
  std::size_t out() const { return W.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

template <typename Real>
struct BasicTrunk {
  std::size_t input_dim = 0;
  std::vector<DenseLayer<Real>> layers;

  std::size_t output_dim() const { return layers.empty() ? input_dim : layers.back().out(); }
  bool operator==(const BasicTrunk&) const = default;
};

using Trunk = BasicTrunk<double>;

struct TrunkConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {128};
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim == 0) throw validation_error("trunk input dimension must be >= 1");
    for (auto h : hidden) {
      if (h == 0) throw validation_error("hidden layer sizes must be >= 1");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrunkConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim}, {"hidden", c.hidden}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrunkConfig& c) {
  io::get_optional(j, "input_dim", c.input_dim);
  io::get_optional(j, "hidden", c.hidden);
  io::get_optional(j, "seed", c.seed);
}

// He-normal weights, zero biases.
inline Trunk init_trunk(const TrunkConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "trunk"));
  Trunk t;
  t.input_dim = cfg.input_dim;
  std::size_t fan_in = cfg.input_dim;
  for (auto h : cfg.hidden) {
    DenseLayer<double> layer{Matrix<double>(h, fan_in), std::vector<double>(h, 0.0)};
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& w : layer.W.values()) w = scale * rng.normal();
    t.layers.push_back(std::move(layer));
    fan_in = h;
  }
  return t;
}

template <typename To, typename From>
BasicTrunk<To> trunk_cast(const BasicTrunk<From>& t) {
  BasicTrunk<To> out;
  out.input_dim = t.input_dim;
  for (const auto& l : t.layers) {
    out.layers.push_back({matrix_cast<To>(l.W), std::vector<To>(l.b.begin(), l.b.end())});
  }
  return out;
}

// Activations of every layer; acts[0] is the input.
template <typename Real>
struct TrunkTrace {
  std::vector<Matrix<Real>> acts;
  const Matrix<Real>& output() const { return acts.back(); }
};

template <typename Real, typename XT>
TrunkTrace<Real> trunk_forward_trace(const BasicTrunk<Real>& trunk, const Matrix<XT>& X) {
  if (X.cols() != trunk.input_dim) {
    throw validation_error("dimension mismatch: trunk expects " + std::to_string(trunk.input_dim) + " inputs, got " +
                           std::to_string(X.cols()));
  }
  TrunkTrace<Real> tr;
  tr.acts.push_back(matrix_cast<Real>(X));
  for (const auto& layer : trunk.layers) {
    auto z = affine_scores(tr.acts.back(), layer.W, std::span<const Real>(layer.b));
    for (auto& v : z.values()) v = v > 0 ? v : Real{0};
    tr.acts.push_back(std::move(z));
  }
  return tr;
}

/// affine -> rectifier per hidden layer; the last hidden output is the feature.
template <typename Real, typename XT>
Matrix<Real> trunk_forward(const BasicTrunk<Real>& trunk, const Matrix<XT>& X) {
  return std::move(trunk_forward_trace(trunk, X).acts.back());
}

/// Gradients of every trunk layer given d(loss)/d(trunk output).
template <typename Real>
std::vector<DenseLayer<Real>> trunk_backward(const BasicTrunk<Real>& trunk, const TrunkTrace<Real>& trace,
                                             Matrix<Real> dout) {
  std::vector<DenseLayer<Real>> grads(trunk.layers.size());
  for (std::size_t l = trunk.layers.size(); l-- > 0;) {
    const auto& layer = trunk.layers[l];
    const auto& out = trace.acts[l + 1];
    const auto& in = trace.acts[l];
    // Rectifier: gradient passes only where the output is positive.
    for (std::size_t i = 0; i < dout.size(); ++i) {
      if (!(out.data()[i] > 0)) dout.data()[i] = 0;
    }
    auto& g = grads[l];
    g.W = Matrix<Real>(layer.out(), layer.in());
    g.b.assign(layer.out(), Real{0});
    for (std::size_t i = 0; i < dout.rows(); ++i) {
      auto d = dout.row(i);
      auto x = in.row(i);
      for (std::size_t o = 0; o < d.size(); ++o) {
        if (d[o] == 0) continue;
        auto gw = g.W.row(o);
        for (std::size_t k = 0; k < x.size(); ++k) gw[k] += d[o] * x[k];
        g.b[o] += d[o];
      }
    }
    if (l == 0) break;
    Matrix<Real> din(dout.rows(), layer.in());
    for (std::size_t i = 0; i < dout.rows(); ++i) {
      auto d = dout.row(i);
      auto di = din.row(i);
      for (std::size_t o = 0; o < d.size(); ++o) {
        if (d[o] == 0) continue;
        auto w = layer.W.row(o);
        for (std::size_t k = 0; k < di.size(); ++k) di[k] += d[o] * w[k];
      }
    }
    dout = std::move(din);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Joint parameters and loss

template <typename Real>
struct JointParams {
  BasicTrunk<Real> trunk;
  std::map<std::string, DenseLayer<Real>> heads;
  bool operator==(const JointParams&) const = default;
};

template <typename Real>
struct TaskBatch {
  std::string task_id;
  Matrix<Real> x;
  std::vector<std::uint32_t> y;
};

template <typename Real>
struct JointLossGrad {
  Real total{};
  Real regularization{};
  std::map<std::string, Real> task_loss;
  JointParams<Real> grad;
};

/// Total loss = sum over task sub-batches of the mean softmax loss of that
/// sub-batch through its own head, plus 0.5 * reg * (sum of squared trunk
/// weights + sum of squared head weights). Biases are not regularized.
template <typename Real>
JointLossGrad<Real> joint_loss_grad(const JointParams<Real>& params, const std::vector<TaskBatch<Real>>& batches,
                                    Real reg) {
  JointLossGrad<Real> out;
  std::size_t rows = 0;
  for (const auto& tb : batches) {
    if (!params.heads.count(tb.task_id)) throw validation_error("no head for task '" + tb.task_id + "'");
    if (tb.x.rows() != tb.y.size()) throw validation_error("sample count mismatch in task batch");
    rows += tb.x.rows();
  }
  Matrix<Real> X(rows, params.trunk.input_dim);
  {
    std::size_t r = 0;
    for (const auto& tb : batches) {
      if (tb.x.cols() != params.trunk.input_dim) throw validation_error("dimension mismatch in task batch");
      std::copy(tb.x.values().begin(), tb.x.values().end(), X.data() + r * X.cols());
      r += tb.x.rows();
    }
  }
  const auto trace = trunk_forward_trace(params.trunk, X);
  const auto& feats = trace.output();
  Matrix<Real> dfeats(feats.rows(), feats.cols());

  for (const auto& [id, head] : params.heads) {
    out.grad.heads[id] = {Matrix<Real>(head.out(), head.in()), std::vector<Real>(head.out(), Real{0})};
  }
  std::size_t offset = 0;
  for (const auto& tb : batches) {
    const auto& head = params.heads.at(tb.task_id);
    const std::size_t m = tb.x.rows();
    Matrix<Real> f(m, feats.cols());
    std::copy(feats.data() + offset * feats.cols(), feats.data() + (offset + m) * feats.cols(), f.data());
    const auto scores = affine_scores(f, head.W, std::span<const Real>(head.b));
    const auto lg = softmax_loss_grad(scores, tb.y);
    out.task_loss[tb.task_id] += lg.loss;
    out.total += lg.loss;

    auto& g = out.grad.heads.at(tb.task_id);
    for (std::size_t i = 0; i < m; ++i) {
      auto ds = lg.dscores.row(i);
      auto x = f.row(i);
      auto df = dfeats.row(offset + i);
      for (std::size_t c = 0; c < ds.size(); ++c) {
        auto gw = g.W.row(c);
        auto w = head.W.row(c);
        for (std::size_t k = 0; k < x.size(); ++k) {
          gw[k] += ds[c] * x[k];
          df[k] += ds[c] * w[k];
        }
        g.b[c] += ds[c];
      }
    }
    offset += m;
  }

  out.grad.trunk.input_dim = params.trunk.input_dim;
  out.grad.trunk.layers = trunk_backward(params.trunk, trace, std::move(dfeats));

  Real sq{};
  for (std::size_t l = 0; l < params.trunk.layers.size(); ++l) {
    const auto& W = params.trunk.layers[l].W;
    sq += squared_norm(W);
    auto& gW = out.grad.trunk.layers[l].W;
    for (std::size_t i = 0; i < W.size(); ++i) gW.data()[i] += reg * W.data()[i];
  }
  for (const auto& [id, head] : params.heads) {
    sq += squared_norm(head.W);
    auto& gW = out.grad.heads.at(id).W;
    for (std::size_t i = 0; i < head.W.size(); ++i) gW.data()[i] += reg * head.W.data()[i];
  }
  out.regularization = Real(0.5) * reg * sq;
  out.total += out.regularization;
  return out;
}

/// Flattens parameters: trunk layers in order (W then b), then heads in id
/// order (W then b).
template <typename Real>
std::vector<Real> flatten(const JointParams<Real>& p) {
  std::vector<Real> out;
  auto put = [&](const DenseLayer<Real>& l) {
    out.insert(out.end(), l.W.values().begin(), l.W.values().end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  };
  for (const auto& l : p.trunk.layers) put(l);
  for (const auto& [id, h] : p.heads) put(h);
  return out;
}

template <typename Real>
void unflatten(JointParams<Real>& p, std::span<const Real> values) {
  std::size_t pos = 0;
  auto take = [&](DenseLayer<Real>& l) {
    for (auto& v : l.W.values()) v = values[pos++];
    for (auto& v : l.b) v = values[pos++];
  };
  for (auto& l : p.trunk.layers) take(l);
  for (auto& [id, h] : p.heads) take(h);
  if (pos != values.size()) throw validation_error("parameter vector length mismatch");
}

template <typename To, typename From>
JointParams<To> params_cast(const JointParams<From>& p) {
  JointParams<To> out;
  out.trunk = trunk_cast<To>(p.trunk);
  for (const auto& [id, h] : p.heads) {
    out.heads[id] = {matrix_cast<To>(h.W), std::vector<To>(h.b.begin(), h.b.end())};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tasks and mixed minibatches

struct Task {
  std::string id;
  LinearData data;  // raw trunk inputs
};

inline Task task_from_bundle(const DatasetBundle& bundle, const std::string& network = "input") {
  Task t;
  t.id = bundle.dataset_id;
  const auto& m = bundle.network(network);
  auto tr = bundle.indices(Split::train);
  auto va = bundle.indices(Split::val);
  t.data.train_x = select_rows<float>(m.data, tr);
  t.data.train_y = bundle.labels_of(tr);
  t.data.val_x = select_rows<float>(m.data, va);
  t.data.val_y = bundle.labels_of(va);
  t.data.num_classes = bundle.num_classes();
  return t;
}

/// Endless per-task sample streams combined into mixed batches. Every batch
/// holds batch_size / k samples of each of the k tasks. Each task's stream
/// is an independent shuffle that is reshuffled when it wraps around. One
/// epoch is ceil(largest task / per-task share) batches.
class MixedBatcher {
 public:
  MixedBatcher(std::vector<std::size_t> task_sizes, std::size_t batch_size, Rng& rng) {
    if (task_sizes.empty()) throw validation_error("need at least one task");
    if (batch_size == 0 || batch_size % task_sizes.size() != 0) {
      throw validation_error("batch size " + std::to_string(batch_size) + " is not divisible by task count " +
                             std::to_string(task_sizes.size()));
    }
    per_task_ = batch_size / task_sizes.size();
    std::size_t largest = 0;
    for (auto n : task_sizes) {
      if (n == 0) throw validation_error("task has no training samples");
      largest = std::max(largest, n);
      Stream s{std::vector<std::size_t>(n), 0, Rng(rng.next_u64())};
      for (std::size_t i = 0; i < n; ++i) s.order[i] = i;
      s.rng.shuffle(std::span<std::size_t>(s.order));
      streams_.push_back(std::move(s));
    }
    batches_per_epoch_ = (largest + per_task_ - 1) / per_task_;
  }

  std::size_t per_task() const { return per_task_; }
  std::size_t batches_per_epoch() const { return batches_per_epoch_; }

  // Per-task sample indices of the next batch.
  std::vector<std::vector<std::size_t>> next() {
    std::vector<std::vector<std::size_t>> batch(streams_.size());
    for (std::size_t t = 0; t < streams_.size(); ++t) {
      auto& s = streams_[t];
      for (std::size_t k = 0; k < per_task_; ++k) {
        if (s.cursor == s.order.size()) {
          s.rng.shuffle(std::span<std::size_t>(s.order));
          s.cursor = 0;
        }
        batch[t].push_back(s.order[s.cursor++]);
      }
    }
    return batch;
  }

 private:
  struct Stream {
    std::vector<std::size_t> order;
    std::size_t cursor;
    Rng rng;
  };
  std::vector<Stream> streams_;
  std::size_t per_task_ = 0;
  std::size_t batches_per_epoch_ = 0;
};

/// One epoch of mixed batches.
inline std::vector<std::vector<std::vector<std::size_t>>> interleave_batches(std::vector<std::size_t> task_sizes,
                                                                            std::size_t batch_size, Rng& rng) {
  MixedBatcher batcher(std::move(task_sizes), batch_size, rng);
  std::vector<std::vector<std::vector<std::size_t>>> out;
  for (std::size_t i = 0; i < batcher.batches_per_epoch(); ++i) out.push_back(batcher.next());
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TaskEpochRecord {
  double train_loss = 0;
  double val_accuracy = 0;
  double lr = 0;
  bool operator==(const TaskEpochRecord&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TaskEpochRecord, train_loss, val_accuracy, lr)

struct JointModel : JointParams<double> {
  std::map<std::string, std::vector<TaskEpochRecord>> history;
  bool operator==(const JointModel&) const = default;
};

inline DenseLayer<double> init_head(std::size_t classes, std::size_t in, std::uint64_t seed) {
  // Every head restarts the same stream, so heads of equal shape start equal.
  Rng rng(derive_seed(seed, "head"));
  DenseLayer<double> h{Matrix<double>(classes, in), std::vector<double>(classes, 0.0)};
  const double scale = std::sqrt(1.0 / static_cast<double>(in));
  for (auto& w : h.W.values()) w = scale * rng.normal();
  return h;
}

inline double head_accuracy(const JointParams<double>& p, const std::string& task_id, const Matrix<float>& x,
                            std::span<const std::uint32_t> y) {
  const auto& head = p.heads.at(task_id);
  const auto feats = trunk_forward(p.trunk, x);
  return accuracy(argmax_rows(affine_scores(feats, head.W, std::span<const double>(head.b))), y);
}

/// Val accuracy of the model's own head for `task`.
inline double evaluate(const JointModel& model, const Task& task) {
  return head_accuracy(model, task.id, task.data.val_x, task.data.val_y);
}

/// Trains `trunk_init` plus fresh heads on mixed batches of all tasks with
/// plain SGD and lr0 * decay^epoch. Softmax loss per head; config.loss_kind
/// and the dropout fields are not used. Zero epochs returns the initial
/// parameters.
inline JointModel joint_train_from(const Trunk& trunk_init, const std::vector<Task>& tasks, const TrainConfig& config) {
  config.validate(/*allow_zero_epochs=*/true);
  if (tasks.empty()) throw validation_error("need at least one task");
  std::set<std::string> ids;
  std::vector<std::size_t> sizes;
  for (const auto& t : tasks) {
    t.data.validate();
    if (!ids.insert(t.id).second) throw validation_error("duplicate task id '" + t.id + "'");
    if (t.data.train_x.cols() != trunk_init.input_dim) {
      throw validation_error("dimension mismatch: task '" + t.id + "' has " + std::to_string(t.data.train_x.cols()) +
                             " inputs, trunk expects " + std::to_string(trunk_init.input_dim));
    }
    sizes.push_back(t.data.train_x.rows());
  }

  JointModel model;
  model.trunk = trunk_init;
  for (const auto& t : tasks) {
    model.heads[t.id] = init_head(t.data.num_classes, trunk_init.output_dim(), config.seed);
    model.history[t.id] = {};
  }
  if (config.epochs == 0) return model;

  Rng rng(derive_seed(config.seed, "batches"));
  MixedBatcher batcher(sizes, config.batch_size, rng);
  const double reg = config.reg;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    std::map<std::string, double> loss_sum;
    for (std::size_t step = 0; step < batcher.batches_per_epoch(); ++step) {
      const auto picks = batcher.next();
      std::vector<TaskBatch<double>> batches;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        TaskBatch<double> tb;
        tb.task_id = tasks[t].id;
        tb.x = select_rows<double>(tasks[t].data.train_x, picks[t]);
        for (auto i : picks[t]) tb.y.push_back(tasks[t].data.train_y[i]);
        batches.push_back(std::move(tb));
      }
      const auto lg = joint_loss_grad<double>(model, batches, reg);
      if (!std::isfinite(lg.total)) throw validation_error("diverged at epoch " + std::to_string(epoch));
      for (const auto& [id, l] : lg.task_loss) loss_sum[id] += l;

      auto step_layer = [lr](DenseLayer<double>& p, const DenseLayer<double>& g) {
        for (std::size_t i = 0; i < p.W.size(); ++i) p.W.data()[i] -= lr * g.W.data()[i];
        for (std::size_t i = 0; i < p.b.size(); ++i) p.b[i] -= lr * g.b[i];
      };
      for (std::size_t l = 0; l < model.trunk.layers.size(); ++l) step_layer(model.trunk.layers[l], lg.grad.trunk.layers[l]);
      for (auto& [id, head] : model.heads) step_layer(head, lg.grad.heads.at(id));
    }
    for (const auto& t : tasks) {
      const double mean_loss = loss_sum[t.id] / static_cast<double>(batcher.batches_per_epoch());
      model.history[t.id].push_back({mean_loss, evaluate(model, t), lr});
    }
  }
  return model;
}

inline JointModel joint_train(const std::vector<Task>& tasks, TrunkConfig trunk_config, const TrainConfig& config) {
  if (tasks.empty()) throw validation_error("need at least one task");
  if (trunk_config.input_dim == 0) trunk_config.input_dim = tasks.front().data.train_x.cols();
  return joint_train_from(init_trunk(trunk_config), tasks, config);
}

/// Single-task training that starts from a given (pre-trained) trunk.
inline JointModel finetune_single(const Trunk& trunk_init, const Task& task, const TrainConfig& config) {
  return joint_train_from(trunk_init, {task}, config);
}

// ---------------------------------------------------------------------------
// Transfer evaluation

/// Frozen-trunk features for the task, optionally row-normalized.
inline LinearData trunk_features(const Trunk& trunk, const Task& task, bool normalize = true) {
  auto features = [&](const Matrix<float>& x) {
    FeatureMatrix f{"trunk", task.id, matrix_cast<float>(trunk_forward(trunk, x))};
    return normalize ? l2_normalize_rows(f).data : f.data;
  };
  LinearData d;
  d.train_x = features(task.data.train_x);
  d.train_y = task.data.train_y;
  d.val_x = features(task.data.val_x);
  d.val_y = task.data.val_y;
  d.num_classes = task.data.num_classes;
  return d;
}

inline SweepResult transfer_sweep(const Trunk& trunk, const Task& task, const GridSpec& grid,
                                  std::size_t parallelism = 1, bool normalize = true) {
  return run_sweep(trunk_features(trunk, task, normalize), StackSpec::make({"trunk"}), grid, parallelism, normalize);
}

/// Linear SVM sweep on frozen trunk features; returns the winner's val accuracy.
inline double transfer_eval(const Trunk& trunk, const Task& task, const GridSpec& grid, std::size_t parallelism = 1,
                            bool normalize = true) {
  return transfer_sweep(trunk, task, grid, parallelism, normalize).best().val_accuracy;
}

// ---------------------------------------------------------------------------
// Serialization

template <typename Real>
void to_json(nlohmann::json& j, const DenseLayer<Real>& l) {
  j = nlohmann::json{{"rows", l.W.rows()}, {"cols", l.W.cols()}, {"W", l.W.values()}, {"b", l.b}};
}

template <typename Real>
void from_json(const nlohmann::json& j, DenseLayer<Real>& l) {
  l.W = Matrix<Real>(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  auto w = j.at("W").get<std::vector<Real>>();
  if (w.size() != l.W.size()) throw validation_error("layer weight count mismatch");
  l.W.values() = std::move(w);
  l.b = j.at("b").get<std::vector<Real>>();
  if (l.b.size() != l.W.rows()) throw validation_error("layer bias count mismatch");
}

inline nlohmann::json to_json(const JointModel& m) {
  nlohmann::json j;
  j["format"] = "SNNJOINT1";
  j["trunk"] = {{"input_dim", m.trunk.input_dim}, {"layers", m.trunk.layers}};
  j["heads"] = m.heads;
  j["history"] = m.history;
  return j;
}

inline JointModel joint_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "SNNJOINT1") throw validation_error("not a joint model");
    JointModel m;
    m.trunk.input_dim = j.at("trunk").at("input_dim").get<std::size_t>();
    m.trunk.layers = j.at("trunk").at("layers").get<std::vector<DenseLayer<double>>>();
    m.heads = j.at("heads").get<std::map<std::string, DenseLayer<double>>>();
    m.history = j.at("history").get<std::map<std::string, std::vector<TaskEpochRecord>>>();
    std::size_t in = m.trunk.input_dim;
    for (const auto& l : m.trunk.layers) {
      if (l.in() != in) throw validation_error("trunk layer shapes do not chain");
      in = l.out();
    }
    for (const auto& [id, h] : m.heads) {
      if (h.in() != m.trunk.output_dim()) throw validation_error("head '" + id + "' does not match trunk output");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("corrupt joint model: ") + e.what());
  }
}

}  // namespace snn
