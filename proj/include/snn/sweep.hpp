#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/classifier.hpp"
#include "snn/io.hpp"
#include "snn/parallel.hpp"
#include "snn/rng.hpp"
#include "snn/stacking.hpp"

namespace snn {

enum class DropoutPolicy { on, off, automatic };

NLOHMANN_JSON_SERIALIZE_ENUM(DropoutPolicy,
                             {{DropoutPolicy::on, "on"}, {DropoutPolicy::off, "off"}, {DropoutPolicy::automatic, "auto"}})

inline DropoutPolicy parse_dropout_policy(const std::string& s) {
  if (s == "on") return DropoutPolicy::on;
  if (s == "off") return DropoutPolicy::off;
  if (s == "auto") return DropoutPolicy::automatic;
  throw validation_error("dropout policy must be on, off or auto");
}

/// Hyperparameter grid. Defaults are the profiling grid used for every stack:
/// learning rates {1e-2, 5e-2, 1e-3, 2e-3}, regularization {0.01, 0.1, 1, 10},
/// epochs {300, 400}, decay 0.98.
struct GridSpec {
  std::vector<double> lrs = {1e-2, 5e-2, 1e-3, 2e-3};
  std::vector<double> regs = {0.01, 0.1, 1, 10};
  std::vector<std::size_t> epoch_choices = {300, 400};
  double decay = 0.98;
  DropoutPolicy dropout = DropoutPolicy::automatic;
  // Fields shared by every config in the grid.
  std::size_t batch_size = 128;
  double dropout_p = 0.5;
  LossKind loss_kind = LossKind::svm;
  std::uint64_t seed = 0;

  void validate() const {
    if (lrs.empty() || regs.empty() || epoch_choices.empty()) throw validation_error("grid lists must be nonempty");
  }
};

inline void to_json(nlohmann::json& j, const GridSpec& g) {
  j = nlohmann::json{{"lrs", g.lrs},
                     {"regs", g.regs},
                     {"epoch_choices", g.epoch_choices},
                     {"decay", g.decay},
                     {"dropout", g.dropout},
                     {"batch_size", g.batch_size},
                     {"dropout_p", g.dropout_p},
                     {"loss_kind", g.loss_kind},
                     {"seed", g.seed}};
}

inline void from_json(const nlohmann::json& j, GridSpec& g) {
  io::get_optional(j, "lrs", g.lrs);
  io::get_optional(j, "regs", g.regs);
  io::get_optional(j, "epoch_choices", g.epoch_choices);
  io::get_optional(j, "decay", g.decay);
  io::get_optional(j, "dropout", g.dropout);
  io::get_optional(j, "batch_size", g.batch_size);
  io::get_optional(j, "dropout_p", g.dropout_p);
  io::get_optional(j, "loss_kind", g.loss_kind);
  io::get_optional(j, "seed", g.seed);
}

/// Cartesian product, lr-major, then reg, then epochs. Config i gets seed
/// derive_seed(grid.seed, i). Under the automatic policy dropout is enabled
/// exactly when the stack has more than two networks.
inline std::vector<TrainConfig> grid_configs(const GridSpec& grid, std::size_t stack_size) {
  grid.validate();
  const bool dropout = grid.dropout == DropoutPolicy::on ||
                       (grid.dropout == DropoutPolicy::automatic && stack_size > 2);
  std::vector<TrainConfig> out;
  out.reserve(grid.lrs.size() * grid.regs.size() * grid.epoch_choices.size());
  for (double lr : grid.lrs) {
    for (double reg : grid.regs) {
      for (std::size_t epochs : grid.epoch_choices) {
        TrainConfig c;
        c.lr0 = lr;
        c.reg = reg;
        c.epochs = epochs;
        c.decay = grid.decay;
        c.batch_size = grid.batch_size;
        c.dropout_p = grid.dropout_p;
        c.dropout_enabled = dropout;
        c.loss_kind = grid.loss_kind;
        c.seed = derive_seed(grid.seed, out.size());
        c.validate();
        out.push_back(c);
      }
    }
  }
  return out;
}

struct ConfigOutcome {
  TrainConfig config;
  double val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string error;

  bool operator==(const ConfigOutcome&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ConfigOutcome, config, val_accuracy, best_epoch, diverged, error)

struct SweepResult {
  StackSpec stack_spec;
  std::vector<ConfigOutcome> outcomes;
  std::size_t winner = 0;
  TrainedModel winner_model;

  const ConfigOutcome& best() const { return outcomes.at(winner); }
  bool operator==(const SweepResult&) const = default;
};

/// Trains every config of the grid. Diverged configs are recorded with
/// accuracy 0; the sweep fails only if every config diverged. The winner is
/// the highest val accuracy, lowest index on ties; the result does not
/// depend on `parallelism`.
inline SweepResult run_sweep(const LinearData& data, const StackSpec& spec, const GridSpec& grid,
                             std::size_t parallelism = 1, bool normalized = true) {
  data.validate();
  const auto configs = grid_configs(grid, spec.size());
  std::vector<ConfigOutcome> outcomes(configs.size());
  std::vector<std::optional<TrainedModel>> models(configs.size());

  parallel_for(configs.size(), parallelism, [&](std::size_t i) {
    outcomes[i].config = configs[i];
    try {
      auto m = train_linear(data, configs[i]);
      outcomes[i].val_accuracy = m.history[m.best_epoch].val_accuracy;
      outcomes[i].best_epoch = m.best_epoch;
      models[i] = std::move(m);
    } catch (const Error& e) {
      outcomes[i].diverged = true;
      outcomes[i].error = e.what();
    }
  });

  SweepResult r;
  r.stack_spec = spec;
  r.outcomes = std::move(outcomes);
  std::optional<std::size_t> winner;
  for (std::size_t i = 0; i < r.outcomes.size(); ++i) {
    if (r.outcomes[i].diverged) continue;
    if (!winner || r.outcomes[i].val_accuracy > r.outcomes[*winner].val_accuracy) winner = i;
  }
  if (!winner) throw validation_error("no viable config for stack " + spec.key());
  r.winner = *winner;
  r.winner_model = std::move(*models[*winner]);
  r.winner_model.stack_spec = spec;
  r.winner_model.normalized = normalized;
  return r;
}

inline SweepResult run_sweep(const DatasetBundle& bundle, const StackSpec& spec, const GridSpec& grid,
                             std::size_t parallelism = 1, bool normalize = true) {
  for (const auto& id : spec.networks()) bundle.network(id);
  return run_sweep(linear_data(bundle, spec, normalize), spec, grid, parallelism, normalize);
}

inline nlohmann::json to_json(const SweepResult& r) {
  return nlohmann::json{{"stack_spec", r.stack_spec},
                        {"winner", r.winner},
                        {"winner_val_accuracy", r.best().val_accuracy},
                        {"configs", r.outcomes}};
}

inline std::string sweep_csv(const SweepResult& r) {
  std::string out = "index,stack,lr0,reg,epochs,decay,batch_size,dropout_enabled,dropout_p,loss,seed,val_accuracy,best_epoch,diverged\n";
  for (std::size_t i = 0; i < r.outcomes.size(); ++i) {
    const auto& o = r.outcomes[i];
    const auto& c = o.config;
    out += std::to_string(i) + "," + r.stack_spec.key() + "," + io::format_double(c.lr0) + "," +
           io::format_double(c.reg) + "," + std::to_string(c.epochs) + "," + io::format_double(c.decay) + "," +
           std::to_string(c.batch_size) + "," + (c.dropout_enabled ? "1" : "0") + "," +
           io::format_double(c.dropout_p) + "," + (c.loss_kind == LossKind::svm ? "svm" : "softmax") + "," +
           std::to_string(c.seed) + "," + io::format_double(o.val_accuracy) + "," + std::to_string(o.best_epoch) +
           "," + (o.diverged ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace snn
