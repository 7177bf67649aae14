#pragma once

// Generalization study over four tasks: a broad base task D, two related
// tasks A and B, and a held-out task C. Trains a base trunk on D, then from
// it trunks specialized on A and on B and a trunk trained jointly on A+B,
// and measures frozen-trunk transfer accuracy of every relevant
// (task, trunk) pair.
//
// Recipe JSON:
// {
//   "concepts": {"latent_dim": 6, "input_dim": 12, "noise_sigma": 0.3, "margin": 0.5},
//   "tasks": {
//     "D": {"concepts": [0,1,2,3,4,5], "samples_per_class": 40},
//     "A": {"concepts": [0,1], "samples_per_class": 150},
//     "B": {"manifest": "b/manifest.json", "network": "input"},   (or concepts)
//     "C": {...}
//   },
//   "trunk": {"hidden": [8]},
//   "pretrain": {TrainConfig}, "finetune": {TrainConfig},
//   "transfer_grid": {GridSpec},
//   "seeds": [1, 2, 3, 4, 5]
// }
// Manifest paths resolve against the recipe's directory.

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snn/feature_store.hpp"
#include "snn/io.hpp"
#include "snn/joint.hpp"
#include "snn/parallel.hpp"
#include "snn/sweep.hpp"

namespace snn {

struct TaskSource {
  std::vector<std::size_t> concepts;
  std::size_t samples_per_class = 100;
  std::string manifest;  // non-empty: load from disk instead of generating
  std::string network = "input";
};

struct StudyRecipe {
  ConceptSpec concepts;  // tasks filled from `tasks` entries that use concepts
  std::map<std::string, TaskSource> tasks;
  TrunkConfig trunk;
  TrainConfig pretrain;
  TrainConfig finetune;
  GridSpec transfer_grid;
  std::vector<std::uint64_t> seeds;
  fs::path base_dir;

  void validate() const {
    for (const char* id : {"A", "B", "C", "D"}) {
      if (!tasks.count(id)) throw validation_error(std::string("recipe is missing task ") + id);
    }
    if (seeds.empty()) throw validation_error("recipe needs at least one seed");
    pretrain.validate();
    finetune.validate(true);
    transfer_grid.validate();
  }
};

/// Reference quartet. Concepts 0..5; D uses all of them, A uses {0,1},
/// B uses {2,3}, C uses {1,3,4}. The trunk has one 8-unit hidden layer so
/// specialization has to give up concepts the task does not use.
inline StudyRecipe reference_recipe() {
  StudyRecipe r;
  r.concepts.latent_dim = 6;
  r.concepts.input_dim = 12;
  r.concepts.noise_sigma = 0.3;
  r.concepts.margin = 0.5;
  r.tasks["D"] = {{0, 1, 2, 3, 4, 5}, 40, "", "input"};
  r.tasks["A"] = {{0, 1}, 150, "", "input"};
  r.tasks["B"] = {{2, 3}, 150, "", "input"};
  r.tasks["C"] = {{1, 3, 4}, 100, "", "input"};
  r.trunk.hidden = {8};

  r.pretrain.lr0 = 0.05;
  r.pretrain.reg = 1e-3;
  r.pretrain.epochs = 100;
  r.pretrain.batch_size = 32;
  r.pretrain.loss_kind = LossKind::softmax;

  r.finetune.lr0 = 0.05;
  r.finetune.reg = 0.03;
  r.finetune.epochs = 100;
  r.finetune.batch_size = 4;  // two samples per task when training A+B jointly
  r.finetune.loss_kind = LossKind::softmax;

  r.transfer_grid.lrs = {0.05, 0.2};
  r.transfer_grid.regs = {1e-3, 1e-2};
  r.transfer_grid.epoch_choices = {100};
  r.transfer_grid.batch_size = 32;
  r.transfer_grid.dropout = DropoutPolicy::off;

  r.seeds = {1, 2, 3, 4, 5};
  return r;
}

inline StudyRecipe recipe_from_json(const nlohmann::json& j, fs::path base_dir = {}) {
  StudyRecipe r = reference_recipe();
  r.base_dir = std::move(base_dir);
  try {
    if (j.contains("concepts")) {
      const auto& c = j.at("concepts");
      io::get_optional(c, "latent_dim", r.concepts.latent_dim);
      io::get_optional(c, "input_dim", r.concepts.input_dim);
      io::get_optional(c, "noise_sigma", r.concepts.noise_sigma);
      io::get_optional(c, "margin", r.concepts.margin);
    }
    if (j.contains("tasks")) {
      r.tasks.clear();
      for (const auto& [id, t] : j.at("tasks").items()) {
        TaskSource s;
        io::get_optional(t, "concepts", s.concepts);
        io::get_optional(t, "samples_per_class", s.samples_per_class);
        io::get_optional(t, "manifest", s.manifest);
        io::get_optional(t, "network", s.network);
        if (s.manifest.empty() && s.concepts.empty()) {
          throw validation_error("task '" + id + "' needs either concepts or a manifest");
        }
        r.tasks[id] = std::move(s);
      }
    }
    if (j.contains("trunk")) r.trunk = j.at("trunk").get<TrunkConfig>();
    if (j.contains("pretrain")) r.pretrain = j.at("pretrain").get<TrainConfig>();
    if (j.contains("finetune")) r.finetune = j.at("finetune").get<TrainConfig>();
    if (j.contains("transfer_grid")) r.transfer_grid = j.at("transfer_grid").get<GridSpec>();
    io::get_optional(j, "seeds", r.seeds);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("recipe: ") + e.what());
  }
  r.validate();
  return r;
}

inline StudyRecipe load_recipe(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("recipe " + path.string() + ": " + e.what());
  }
  return recipe_from_json(j, path.parent_path());
}

/// Materializes every task of the recipe for one seed.
inline std::map<std::string, Task> study_tasks(const StudyRecipe& recipe, std::uint64_t seed) {
  ConceptSpec spec = recipe.concepts;
  spec.tasks.clear();
  std::map<std::string, Task> out;
  for (const auto& [id, src] : recipe.tasks) {
    if (!src.manifest.empty()) {
      fs::path p = src.manifest;
      if (p.is_relative()) p = recipe.base_dir / p;
      auto bundle = load_bundle(p);
      auto t = task_from_bundle(bundle, src.network);
      t.id = id;
      out.emplace(id, std::move(t));
    } else {
      spec.tasks.push_back({id, src.concepts, src.samples_per_class});
    }
  }
  if (!spec.tasks.empty()) {
    for (auto& [id, b] : generate_concept_tasks(spec, seed)) out.emplace(id, task_from_bundle(b));
  }
  return out;
}

struct StudyTrunks {
  JointModel base;  // D
  JointModel a;
  JointModel b;
  JointModel ab;
};

inline StudyTrunks train_study_trunks(const StudyRecipe& recipe, const std::map<std::string, Task>& tasks,
                                      std::uint64_t seed, std::size_t parallelism = 1) {
  TrunkConfig tc = recipe.trunk;
  tc.input_dim = tasks.at("D").data.train_x.cols();
  tc.seed = derive_seed(seed, "trunk");
  TrainConfig pre = recipe.pretrain;
  pre.seed = derive_seed(seed, "pretrain");
  TrainConfig ft = recipe.finetune;
  ft.seed = derive_seed(seed, "finetune");

  StudyTrunks s;
  s.base = joint_train({tasks.at("D")}, tc, pre);
  // The three specializations are independent given the base trunk.
  parallel_for(3, parallelism, [&](std::size_t i) {
    if (i == 0) s.a = finetune_single(s.base.trunk, tasks.at("A"), ft);
    if (i == 1) s.b = finetune_single(s.base.trunk, tasks.at("B"), ft);
    if (i == 2) s.ab = joint_train_from(s.base.trunk, {tasks.at("A"), tasks.at("B")}, ft);
  });
  return s;
}

struct StudyCell {
  std::string table;  // "specialization" or "generalization"
  std::string task;
  std::string trunk;
};

// Rows of the two result tables.
inline const std::array<StudyCell, 9>& study_cells() {
  static const std::array<StudyCell, 9> cells = {{
      {"specialization", "A", "A"},
      {"specialization", "B", "B"},
      {"specialization", "B", "A"},
      {"specialization", "A", "AB"},
      {"specialization", "B", "AB"},
      {"generalization", "C", "D"},
      {"generalization", "C", "A"},
      {"generalization", "C", "AB"},
      {"generalization", "B", "D"},
  }};
  return cells;
}

struct StudyRun {
  std::uint64_t seed = 0;
  // (task, trunk) -> transfer accuracy
  std::map<std::pair<std::string, std::string>, double> transfer;

  double at(const std::string& task, const std::string& trunk) const { return transfer.at({task, trunk}); }
};

inline StudyRun run_study_seed(const StudyRecipe& recipe, std::uint64_t seed, std::size_t parallelism = 1) {
  const auto tasks = study_tasks(recipe, seed);
  const auto trunks = train_study_trunks(recipe, tasks, seed, parallelism);
  auto trunk_of = [&](const std::string& name) -> const Trunk& {
    if (name == "D") return trunks.base.trunk;
    if (name == "A") return trunks.a.trunk;
    if (name == "B") return trunks.b.trunk;
    return trunks.ab.trunk;
  };
  GridSpec grid = recipe.transfer_grid;
  grid.seed = seed;
  StudyRun run;
  run.seed = seed;
  for (const auto& cell : study_cells()) {
    run.transfer[{cell.task, cell.trunk}] =
        transfer_eval(trunk_of(cell.trunk), tasks.at(cell.task), grid, parallelism);
  }
  return run;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw validation_error("median of empty set");
  std::sort(v.begin(), v.end());
  const auto m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct StudyResult {
  std::vector<StudyRun> runs;

  double median_at(const std::string& task, const std::string& trunk) const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.at(task, trunk));
    return median(v);
  }
};

inline StudyResult run_study(const StudyRecipe& recipe, std::size_t parallelism = 1) {
  recipe.validate();
  StudyResult result;
  for (auto seed : recipe.seeds) result.runs.push_back(run_study_seed(recipe, seed, parallelism));
  return result;
}

// table,task,trunk,seed,accuracy with one "median" row per cell.
inline std::string study_csv(const StudyResult& r) {
  std::string out = "table,task,trunk,seed,accuracy\n";
  for (const auto& cell : study_cells()) {
    for (const auto& run : r.runs) {
      out += cell.table + "," + cell.task + "," + cell.trunk + "," + std::to_string(run.seed) + "," +
             io::format_double(run.at(cell.task, cell.trunk)) + "\n";
    }
    out += cell.table + "," + cell.task + "," + cell.trunk + ",median," +
           io::format_double(r.median_at(cell.task, cell.trunk)) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const StudyResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& cell : study_cells()) {
    nlohmann::json per_seed = nlohmann::json::object();
    for (const auto& run : r.runs) per_seed[std::to_string(run.seed)] = run.at(cell.task, cell.trunk);
    rows.push_back({{"table", cell.table},
                    {"task", cell.task},
                    {"trunk", cell.trunk},
                    {"median", r.median_at(cell.task, cell.trunk)},
                    {"per_seed", per_seed}});
  }
  return nlohmann::json{{"cells", rows}};
}

}  // namespace snn
