// snn: command-line front end for stacked-network transfer learning.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "snn/snn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  std::string out;
  std::string format = "json";
};

snn::Format format_of(const Globals& g) { return snn::parse_format(g.format); }

// Writes to --out when given, otherwise to stdout.
void deliver(const Globals& g, const json& j, const std::string& csv) {
  const std::string text = format_of(g) == snn::Format::json ? j.dump(2) + "\n" : csv;
  if (g.out.empty()) {
    std::cout << text;
  } else {
    snn::emit(g.out, text);
  }
}

std::string kv_csv(const json& j) {
  std::string out = "key,value\n";
  for (const auto& [k, v] : j.items()) {
    if (v.is_primitive()) out += k + "," + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : snn::io::split(s, ',')) {
    auto t = std::string(snn::io::trim(part));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& p : split_list(s)) out.push_back(snn::io::parse_double(p, what));
  return out;
}

snn::LossKind parse_loss(const std::string& s) {
  if (s == "svm") return snn::LossKind::svm;
  if (s == "softmax") return snn::LossKind::softmax;
  throw snn::validation_error("loss must be svm or softmax");
}

struct GridOptions {
  std::string lrs, regs, epochs, dropout = "auto", loss = "svm";
  double decay = 0.98;
  std::size_t batch = 128;
  double dropout_p = 0.5;

  void attach(CLI::App* app) {
    app->add_option("--lrs", lrs, "Comma-separated learning rates (default 1e-2,5e-2,1e-3,2e-3)");
    app->add_option("--regs", regs, "Comma-separated L2 factors (default 0.01,0.1,1,10)");
    app->add_option("--epoch-choices", epochs, "Comma-separated epoch counts (default 300,400)");
    app->add_option("--decay", decay, "Per-epoch learning-rate multiplier")->capture_default_str();
    app->add_option("--batch", batch, "Minibatch size")->capture_default_str();
    app->add_option("--dropout", dropout, "Dropout policy: auto, on, off")->capture_default_str();
    app->add_option("--dropout-p", dropout_p, "Drop probability when dropout is on")->capture_default_str();
    app->add_option("--loss", loss, "Loss: svm or softmax")->capture_default_str();
  }

  snn::GridSpec grid(std::uint64_t seed) const {
    snn::GridSpec g;
    if (!lrs.empty()) g.lrs = split_doubles(lrs, "--lrs");
    if (!regs.empty()) g.regs = split_doubles(regs, "--regs");
    if (!epochs.empty()) {
      g.epoch_choices.clear();
      for (double e : split_doubles(epochs, "--epoch-choices")) g.epoch_choices.push_back(static_cast<std::size_t>(e));
    }
    g.decay = decay;
    g.batch_size = batch;
    g.dropout = snn::parse_dropout_policy(dropout);
    g.dropout_p = dropout_p;
    g.loss_kind = parse_loss(loss);
    g.seed = seed;
    return g;
  }
};

snn::StackSpec stack_from(const std::string& networks, const std::string& weights) {
  std::optional<std::vector<double>> w;
  if (!weights.empty()) w = split_doubles(weights, "--weights");
  return snn::StackSpec::make(split_list(networks), std::move(w));
}

snn::StudyRecipe recipe_from(const std::string& path) {
  return path.empty() ? snn::reference_recipe() : snn::load_recipe(path);
}

json history_json(const snn::TrainedModel& m) {
  return json{{"stack_spec", m.stack_spec},
              {"best_epoch", m.best_epoch},
              {"best_val_accuracy", m.history.at(m.best_epoch).val_accuracy},
              {"epochs", m.history.size()},
              {"config", m.config}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stacked neural network transfer learning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--seed", g.seed, "Base random seed")->capture_default_str();
  app.add_option("--parallelism", g.parallelism, "Worker threads for independent training runs")
      ->capture_default_str();
  app.add_option("--out", g.out, "Output path (stdout when omitted)");
  app.add_option("--format", g.format, "Output format: json or csv")->capture_default_str();

  // synth -----------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic partition bundle into a directory");
  std::string synth_spec;
  std::size_t spc = 50, dims = 8;
  double separation = 5.0, sigma = 1.0;
  synth->add_option("--spec", synth_spec, "SynthSpec JSON (default: complementary 4-class, 2-network preset)");
  synth->add_option("--samples-per-class", spc)->capture_default_str();
  synth->add_option("--dims", dims, "Feature dimension per network")->capture_default_str();
  synth->add_option("--separation", separation)->capture_default_str();
  synth->add_option("--sigma", sigma)->capture_default_str();
  synth->add_option("--dir", g.out, "Bundle directory (alias of --out)");

  // ingest ----------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "Convert CSV features (header f0..f{d-1}) into a feature file");
  std::string csv_path, network_id, dataset_id = "dataset";
  ingest->add_option("--csv", csv_path)->required();
  ingest->add_option("--network", network_id)->required();
  ingest->add_option("--dataset", dataset_id)->capture_default_str();

  // train -----------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train one linear head on a stacked feature set");
  std::string manifest, networks, weights, loss = "svm", model_out;
  snn::TrainConfig tc;
  bool dropout = false, no_normalize = false;
  train->add_option("--manifest", manifest)->required();
  train->add_option("--networks", networks, "Comma-separated network ids")->required();
  train->add_option("--weights", weights, "Comma-separated per-network weights in (0,1]");
  train->add_option("--lr", tc.lr0)->capture_default_str();
  train->add_option("--reg", tc.reg)->capture_default_str();
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--decay", tc.decay)->capture_default_str();
  train->add_option("--batch", tc.batch_size)->capture_default_str();
  train->add_flag("--dropout", dropout, "Enable inverted dropout on the stacked features");
  train->add_option("--dropout-p", tc.dropout_p)->capture_default_str();
  train->add_option("--loss", loss)->capture_default_str();
  train->add_flag("--no-normalize", no_normalize, "Skip per-network row L2 normalization");
  train->add_option("--model", model_out, "Model file (SNNMDL1 blob + .json sidecar)");

  // sweep -----------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "Grid search for one stacked network");
  GridOptions sweep_grid;
  sweep->add_option("--manifest", manifest)->required();
  sweep->add_option("--networks", networks)->required();
  sweep->add_option("--weights", weights);
  sweep->add_flag("--no-normalize", no_normalize);
  sweep->add_option("--model", model_out, "Write the winning model here");
  sweep_grid.attach(sweep);

  // subsets ---------------------------------------------------------------
  auto* subsets = app.add_subcommand("subsets", "List every nonempty subset of a network set");
  subsets->add_option("--networks", networks)->required();

  // ensemble --------------------------------------------------------------
  auto* ensemble = app.add_subcommand("ensemble", "Stack ensemble over all subsets of a network set");
  GridOptions ens_grid;
  bool prob = false;
  ensemble->add_option("--manifest", manifest)->required();
  ensemble->add_option("--networks", networks)->required();
  ensemble->add_flag("--prob", prob, "Softmax each member's scores before averaging");
  ensemble->add_flag("--no-normalize", no_normalize);
  ens_grid.attach(ensemble);

  // weights ---------------------------------------------------------------
  auto* weights_cmd = app.add_subcommand("weights", "Accuracy-ratio weights for a weighted stack");
  std::vector<std::string> acc_pairs;
  weights_cmd->add_option("--acc", acc_pairs, "network=accuracy (repeatable)")->required();

  // joint-train -----------------------------------------------------------
  auto* joint = app.add_subcommand("joint-train", "Train a shared trunk on one or more recipe tasks");
  std::string recipe_path, tasks_arg, init_path;
  joint->add_option("--recipe", recipe_path, "Study recipe JSON (default: reference quartet)");
  joint->add_option("--tasks", tasks_arg, "Comma-separated task ids from the recipe")->required();
  joint->add_option("--init", init_path, "Start from this joint model's trunk (uses the finetune config)");
  joint->add_option("--model", model_out, "Write the joint model JSON here");

  // transfer-eval ---------------------------------------------------------
  auto* transfer = app.add_subcommand(
      "transfer-eval", "Frozen-trunk transfer accuracy; without --trunk, runs the full four-task study");
  std::string trunk_path, task_id;
  transfer->add_option("--recipe", recipe_path);
  transfer->add_option("--trunk", trunk_path, "Joint model JSON whose trunk is evaluated");
  transfer->add_option("--task", task_id, "Task id to evaluate (with --trunk)");

  // confusion -------------------------------------------------------------
  auto* conf = app.add_subcommand("confusion", "Confusion matrix of a trained model on one split");
  std::string model_path, split = "val";
  conf->add_option("--model", model_path)->required();
  conf->add_option("--manifest", manifest)->required();
  conf->add_option("--split", split)->capture_default_str();

  // report ----------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Degradation table from per-dataset stack accuracies");
  std::string results_path;
  report->add_option("--results", results_path,
                     "JSON {\"datasets\": {name: [{\"networks\": [...], \"accuracy\": x}]}}")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    format_of(g);

    if (*synth) {
      if (g.out.empty()) throw snn::validation_error("synth needs --out DIR");
      snn::SynthSpec spec = snn::complementary_spec();
      if (!synth_spec.empty()) {
        auto j = json::parse(snn::io::read_file(synth_spec));
        spec.dataset_id = j.value("dataset_id", spec.dataset_id);
        spec.num_classes = j.at("num_classes").get<std::size_t>();
        spec.partitions = j.at("partitions").get<decltype(spec.partitions)>();
      }
      spec.samples_per_class = spc;
      spec.dims_per_network = dims;
      spec.cluster_separation = separation;
      spec.noise_sigma = sigma;
      const auto bundle = snn::generate_synthetic(spec, g.seed);
      const auto path = snn::write_bundle(bundle, g.out);
      json j{{"manifest", path.string()},
             {"n", bundle.n()},
             {"classes", bundle.num_classes()},
             {"networks", bundle.features.size()},
             {"train", bundle.indices(snn::Split::train).size()},
             {"val", bundle.indices(snn::Split::val).size()},
             {"test", bundle.indices(snn::Split::test).size()}};
      std::cout << (format_of(g) == snn::Format::json ? j.dump(2) + "\n" : kv_csv(j));
    } else if (*ingest) {
      if (g.out.empty()) throw snn::validation_error("ingest needs --out FILE");
      auto m = snn::read_feature_csv(csv_path, network_id, dataset_id);
      snn::write_feature_file(m, g.out);
      json j{{"path", g.out}, {"network", m.network_id}, {"n", m.n()}, {"d", m.d()}};
      std::cout << (format_of(g) == snn::Format::json ? j.dump(2) + "\n" : kv_csv(j));
    } else if (*train) {
      const auto bundle = snn::load_bundle(manifest);
      const auto spec = stack_from(networks, weights);
      tc.dropout_enabled = dropout;
      tc.loss_kind = parse_loss(loss);
      tc.seed = g.seed;
      auto model = snn::train_linear(snn::linear_data(bundle, spec, !no_normalize), tc);
      model.stack_spec = spec;
      model.normalized = !no_normalize;
      if (!model_out.empty()) snn::save_model(model, model_out);
      auto j = history_json(model);
      std::string csv = "epoch,train_loss,val_accuracy,lr\n";
      for (std::size_t e = 0; e < model.history.size(); ++e) {
        const auto& h = model.history[e];
        csv += std::to_string(e) + "," + snn::io::format_double(h.train_loss) + "," +
               snn::io::format_double(h.val_accuracy) + "," + snn::io::format_double(h.lr) + "\n";
      }
      j["history"] = model.history;
      deliver(g, j, csv);
    } else if (*sweep) {
      const auto bundle = snn::load_bundle(manifest);
      const auto spec = stack_from(networks, weights);
      auto result = snn::run_sweep(bundle, spec, sweep_grid.grid(g.seed), g.parallelism, !no_normalize);
      if (!model_out.empty()) snn::save_model(result.winner_model, model_out);
      deliver(g, snn::to_json(result), snn::sweep_csv(result));
    } else if (*subsets) {
      const auto list = snn::enumerate_subsets(split_list(networks));
      json j = json::array();
      std::string csv = "index,size,stack\n";
      for (std::size_t i = 0; i < list.size(); ++i) {
        j.push_back(list[i]);
        csv += std::to_string(i) + "," + std::to_string(list[i].size()) + "," + list[i].key() + "\n";
      }
      deliver(g, json{{"count", list.size()}, {"subsets", j}}, csv);
    } else if (*ensemble) {
      const auto bundle = snn::load_bundle(manifest);
      auto r = snn::stack_ensemble(bundle, split_list(networks), ens_grid.grid(g.seed), g.parallelism, prob,
                                   !no_normalize);
      deliver(g, snn::to_json(r), snn::subsets_csv(r));
    } else if (*weights_cmd) {
      std::map<std::string, double> accs;
      for (const auto& pair : acc_pairs) {
        auto pos = pair.find('=');
        if (pos == std::string::npos) throw snn::validation_error("--acc expects network=accuracy, got '" + pair + "'");
        accs[pair.substr(0, pos)] = snn::io::parse_double(pair.substr(pos + 1), "--acc");
      }
      const auto w = snn::accuracy_weights(accs);
      std::string csv = "network,accuracy,weight\n";
      for (const auto& [id, v] : w) {
        csv += id + "," + snn::io::format_double(accs.at(id)) + "," + snn::io::format_double(v) + "\n";
      }
      deliver(g, json{{"weights", w}, {"stack_spec", snn::weighted_stack(accs)}}, csv);
    } else if (*joint) {
      const auto recipe = recipe_from(recipe_path);
      const auto tasks = snn::study_tasks(recipe, g.seed);
      std::vector<snn::Task> chosen;
      for (const auto& id : split_list(tasks_arg)) {
        auto it = tasks.find(id);
        if (it == tasks.end()) throw snn::validation_error("recipe has no task '" + id + "'");
        chosen.push_back(it->second);
      }
      snn::JointModel model;
      if (!init_path.empty()) {
        const auto init = snn::joint_model_from_json(json::parse(snn::io::read_file(init_path)));
        auto cfg = recipe.finetune;
        cfg.seed = snn::derive_seed(g.seed, "finetune");
        model = snn::joint_train_from(init.trunk, chosen, cfg);
      } else {
        auto trunk_cfg = recipe.trunk;
        trunk_cfg.input_dim = 0;
        trunk_cfg.seed = snn::derive_seed(g.seed, "trunk");
        auto cfg = recipe.pretrain;
        cfg.seed = snn::derive_seed(g.seed, "pretrain");
        model = snn::joint_train(chosen, trunk_cfg, cfg);
      }
      if (!model_out.empty()) snn::emit(model_out, snn::to_json(model));
      json j{{"tasks", split_list(tasks_arg)}};
      std::string csv = "task,val_accuracy\n";
      for (const auto& t : chosen) {
        const double acc = snn::evaluate(model, t);
        j["val_accuracy"][t.id] = acc;
        csv += t.id + "," + snn::io::format_double(acc) + "\n";
      }
      deliver(g, j, csv);
    } else if (*transfer) {
      auto recipe = recipe_from(recipe_path);
      if (!trunk_path.empty()) {
        if (task_id.empty()) throw snn::validation_error("--trunk needs --task");
        const auto model = snn::joint_model_from_json(json::parse(snn::io::read_file(trunk_path)));
        const auto tasks = snn::study_tasks(recipe, g.seed);
        auto it = tasks.find(task_id);
        if (it == tasks.end()) throw snn::validation_error("recipe has no task '" + task_id + "'");
        auto grid = recipe.transfer_grid;
        grid.seed = g.seed;
        const double acc = snn::transfer_eval(model.trunk, it->second, grid, g.parallelism);
        json j{{"task", task_id}, {"trunk", trunk_path}, {"accuracy", acc}};
        deliver(g, j, kv_csv(j));
      } else {
        const auto result = snn::run_study(recipe, g.parallelism);
        deliver(g, snn::to_json(result), snn::study_csv(result));
      }
    } else if (*conf) {
      const auto model = snn::load_model(model_path);
      const auto bundle = snn::load_bundle(manifest);
      const auto x = snn::stacked_features(bundle, model.stack_spec, model.normalized);
      const auto idx = bundle.indices(snn::parse_split(split));
      const auto pred = snn::predict(model, snn::select_rows<float>(x.data, idx));
      const auto cm = snn::confusion(pred.labels, bundle.labels_of(idx), bundle.num_classes(), bundle.class_names);
      deliver(g, snn::to_json(cm), snn::confusion_csv(cm));
    } else if (*report) {
      const auto results = snn::results_from_json(json::parse(snn::io::read_file(results_path)));
      const auto table = snn::degradation_table(results);
      deliver(g, snn::to_json(table), snn::degradation_csv(table));
    }
  } catch (const snn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == snn::ErrorKind::io ? 2 : 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
