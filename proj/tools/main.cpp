// Command-line front end: data generation, training, evaluation, and
// rationale explanation. Exit codes: 0 success, 1 runtime failure, 2 usage or
// configuration error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "graphfnp/graphfnp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace graphfnp;

namespace {

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Finds the single TU prefix in a directory (exactly one *_A.txt expected).
std::string detect_tu_name(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string file = entry.path().filename().string();
    const std::string suffix = "_A.txt";
    if (file.size() > suffix.size() &&
        file.compare(file.size() - suffix.size(), suffix.size(), suffix) == 0)
      names.push_back(file.substr(0, file.size() - suffix.size()));
  }
  if (names.empty()) throw IoError("no TU dataset (*_A.txt) under " + dir.string());
  if (names.size() > 1) throw ArgumentError("multiple TU datasets under " + dir.string());
  return names[0];
}

Dataset load_dataset(const fs::path& dir) { return parse_tu_dataset(dir, detect_tu_name(dir)); }

struct SplitConfig {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  bool stratified = true;
};

SplitConfig split_config_from_json(const json& j) {
  SplitConfig s;
  if (!j.contains("split")) return s;
  const json& sj = j.at("split");
  for (auto it = sj.begin(); it != sj.end(); ++it) {
    const std::string& key = it.key();
    if (key != "train_fraction" && key != "val_fraction" && key != "test_fraction" &&
        key != "stratified")
      throw ArgumentError("config: unknown key 'split." + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!sj.contains(key)) return;
    try {
      field = sj.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw ArgumentError(std::string("config: bad value for key 'split.") + key + "'");
    }
  };
  get("train_fraction", s.train_fraction);
  get("val_fraction", s.val_fraction);
  get("test_fraction", s.test_fraction);
  get("stratified", s.stratified);
  return s;
}

std::array<Dataset, 3> split_for(const Dataset& data, const SplitConfig& sc,
                                 std::uint64_t seed) {
  SplitSpec spec;
  spec.train_fraction = sc.train_fraction;
  spec.val_fraction = sc.val_fraction;
  spec.test_fraction = sc.test_fraction;
  spec.stratified = sc.stratified;
  spec.seed = seed;
  return split(data, spec);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string kind;
  std::string out;
  int count = 1000;
  std::uint64_t seed = 0;
  int ba_min = 15;
  int ba_max = 20;
  std::string tu_dir;
  std::string tu_name;
  std::string name;
};

int cmd_gen_data(const GenDataArgs& args) {
  Dataset ds;
  std::string name = args.name;
  if (args.kind == "ba-motif") {
    ds = generate_ba_motif_dataset(args.count, {args.ba_min, args.ba_max}, args.seed);
    if (name.empty()) name = "BAMOTIF";
  } else if (args.kind == "tu") {
    if (args.tu_dir.empty()) throw ArgumentError("--tu-dir is required for --kind tu");
    const std::string src_name =
        args.tu_name.empty() ? detect_tu_name(args.tu_dir) : args.tu_name;
    ds = parse_tu_dataset(args.tu_dir, src_name);
    if (name.empty()) name = src_name;
  } else {
    throw ArgumentError("--kind must be ba-motif or tu");
  }

  const fs::path out_dir(args.out);
  write_tu_dataset(ds, out_dir, name);

  json manifest;
  manifest["kind"] = args.kind;
  manifest["name"] = name;
  manifest["count"] = ds.size();
  manifest["num_classes"] = ds.num_classes;
  manifest["seed"] = args.seed;
  manifest["dataset_fingerprint"] = dataset_fingerprint(ds);
  manifest["created"] = iso_timestamp();
  write_json(out_dir / "manifest.json", manifest);

  std::cout << "wrote " << ds.size() << " graphs to " << out_dir.string()
            << " (fingerprint " << dataset_fingerprint(ds) << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> ablation;
  std::optional<int> epochs;
};

template <typename S>
int run_training(const TrainConfig& cfg, const SplitConfig& sc, const Dataset& data,
                 const TrainArgs& args) {
  auto [train_set, val_set, test_set] = split_for(data, sc, cfg.seed);
  const fs::path out_dir(args.out);

  auto result = train<S>(train_set, val_set, cfg, out_dir);

  // epochs may be zero; always leave a loadable checkpoint behind
  if (result.checkpoint_path.empty()) {
    const auto ckpt = out_dir / "checkpoint.bin";
    save_parameters(ckpt, result.model.params);
    result.checkpoint_path = ckpt;
  }

  json run;
  run["config"] = train_config_to_json(cfg);
  run["config_hash"] = config_hash(cfg);
  run["split"] = {{"train_fraction", sc.train_fraction},
                  {"val_fraction", sc.val_fraction},
                  {"test_fraction", sc.test_fraction},
                  {"stratified", sc.stratified}};
  run["seed"] = cfg.seed;
  run["data_dir"] = fs::absolute(args.data).string();
  run["dataset_fingerprint"] = dataset_fingerprint(data);
  run["checkpoint"] = result.checkpoint_path.filename().string();
  if (!result.best_checkpoint_path.empty())
    run["checkpoint_best"] = result.best_checkpoint_path.filename().string();
  run["losses_csv"] = "losses.csv";
  run["best_epoch"] = result.best_epoch;
  run["best_val_accuracy"] = result.best_val_accuracy;
  run["created"] = iso_timestamp();
  write_json(out_dir / "run.json", run);

  std::cout << "trained " << cfg.epochs << " epochs";
  if (cfg.finetune_epochs > 0) std::cout << " + " << cfg.finetune_epochs << " fine-tune";
  std::cout << "; best val accuracy " << result.best_val_accuracy << " at epoch "
            << result.best_epoch << "\n"
            << "checkpoint: " << result.checkpoint_path.string() << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args) {
  const json config_json = read_json(args.config);
  TrainConfig cfg = train_config_from_json(config_json);
  const SplitConfig sc = split_config_from_json(config_json);
  if (args.seed) cfg.seed = *args.seed;
  if (args.epochs) cfg.epochs = *args.epochs;
  if (!args.ablation.empty()) {
    std::set<std::string> names(args.ablation.begin(), args.ablation.end());
    cfg.ablation = Ablation::from_names(names);
  }
  cfg.validate();

  const Dataset data = load_dataset(args.data);
  fs::create_directories(args.out);
  if (cfg.precision == "f64") return run_training<double>(cfg, sc, data, args);
  return run_training<float>(cfg, sc, data, args);
}

// ---------------------------------------------------------------------------
// eval / explain: shared run loading
// ---------------------------------------------------------------------------

struct LoadedRun {
  TrainConfig cfg;
  SplitConfig sc;
  json run;
  fs::path run_dir;
  Dataset data;
};

LoadedRun load_run(const std::string& run_dir_s, const std::string& data_override,
                   const std::string& config_override) {
  LoadedRun lr;
  lr.run_dir = fs::path(run_dir_s);
  const fs::path run_json = lr.run_dir / "run.json";
  if (!fs::exists(run_json)) throw IoError("missing run manifest: " + run_json.string());
  lr.run = read_json(run_json);
  lr.cfg = train_config_from_json(lr.run.at("config"));
  {
    json with_split = lr.run.at("config");
    with_split["split"] = lr.run.at("split");
    lr.sc = split_config_from_json(with_split);
  }

  if (!config_override.empty()) {
    const json other = read_json(config_override);
    TrainConfig other_cfg = train_config_from_json(other);
    if (config_hash(other_cfg) != lr.run.at("config_hash").get<std::string>())
      throw IoError("config hash mismatch: " + config_override +
                    " does not match the checkpointed run");
  }

  const std::string data_dir =
      data_override.empty() ? lr.run.at("data_dir").get<std::string>() : data_override;
  lr.data = load_dataset(data_dir);
  const std::string fp = dataset_fingerprint(lr.data);
  if (fp != lr.run.at("dataset_fingerprint").get<std::string>())
    throw IoError("dataset fingerprint mismatch: " + data_dir +
                  " is not the dataset this run was trained on");
  return lr;
}

template <typename S>
ModelState<S> load_model(const LoadedRun& lr, bool prefer_best) {
  auto [train_set, val_set, test_set] = split_for(lr.data, lr.sc, lr.cfg.seed);
  ModelState<S> model = init_model<S>(model_config_from(lr.cfg, train_set), lr.cfg.seed);
  fs::path ckpt = lr.run_dir / lr.run.at("checkpoint").get<std::string>();
  if (prefer_best && lr.run.contains("checkpoint_best")) {
    const fs::path best = lr.run_dir / lr.run.at("checkpoint_best").get<std::string>();
    if (fs::exists(best)) ckpt = best;
  }
  if (!fs::exists(ckpt)) throw IoError("missing checkpoint: " + ckpt.string());
  apply_parameters(load_parameter_arrays(ckpt), model);
  return model;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string run;
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool temperature_scaling = false;
  bool use_last = false;
};

template <typename S>
int run_eval(const LoadedRun& lr, const EvalArgs& args) {
  auto [train_set, val_set, test_set] = split_for(lr.data, lr.sc, lr.cfg.seed);
  ModelState<S> model = load_model<S>(lr, !args.use_last);
  const std::uint64_t seed = args.seed ? *args.seed : lr.cfg.seed;

  auto record = evaluate(model, test_set, lr.cfg.mc_samples_eval, mix64(seed, 0xeba1));

  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);

  json metrics;
  metrics["accuracy"] = record.accuracy;
  if (record.auroc) metrics["auroc"] = *record.auroc;
  metrics["ece"] = record.calibration.ece;
  metrics["num_test_graphs"] = test_set.size();
  if (record.rf1_available) {
    metrics["rf1_at_1"] = record.rf1_at_1.f1;
    metrics["rf1_at_3"] = record.rf1_at_3.f1;
  } else {
    metrics["rf1_skipped"] = "rationales disabled (no_zR)";
  }

  if (args.temperature_scaling) {
    auto val_record = evaluate(model, val_set, lr.cfg.mc_samples_eval, mix64(seed, 0x7e3a));
    std::vector<int> val_labels = val_record.labels;
    const double temperature =
        temperature_scale(val_record.log_mean_probs, val_labels, default_temperature_grid());

    std::vector<double> scaled_conf(test_set.size());
    std::vector<bool> scaled_correct(test_set.size());
    for (int i = 0; i < test_set.size(); ++i) {
      Eigen::RowVectorXd scaled = record.log_mean_probs.row(i) / temperature;
      Eigen::RowVectorXd probs = softmax_row(scaled);
      Eigen::Index arg = 0;
      const double conf = probs.maxCoeff(&arg);
      scaled_conf[i] = conf;
      scaled_correct[i] = static_cast<int>(arg) == record.labels[i];
    }
    metrics["temperature"] = temperature;
    metrics["ece_raw"] = record.calibration.ece;
    metrics["ece_scaled"] = ece(scaled_conf, scaled_correct, 10).ece;
  }

  write_json(out_dir / "metrics.json", metrics);
  write_reliability_csv(out_dir / "reliability.csv", record.calibration);

  json explanations = json::array();
  for (const auto& ex : record.explanations) explanations.push_back(explanation_to_json(ex));
  write_json(out_dir / "explanations.json", explanations);

  std::cout << metrics.dump(2) << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  LoadedRun lr = load_run(args.run, args.data, args.config);
  if (lr.cfg.precision == "f64") return run_eval<double>(lr, args);
  return run_eval<float>(lr, args);
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

struct ExplainArgs {
  std::string run;
  std::string data;
  std::string out;
  std::string graph_id;
  int rationale_index = -1;
  int decodes = 3;
  std::optional<std::uint64_t> seed;
};

template <typename S>
int run_explain(const LoadedRun& lr, const ExplainArgs& args) {
  ModelState<S> model = load_model<S>(lr, true);
  if (model.config.ablation.no_zR)
    throw UnsupportedError("explain: rationales disabled in this checkpoint (no_zR)");
  const std::uint64_t seed = args.seed ? *args.seed : lr.cfg.seed;
  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);

  int rationale_index = args.rationale_index;
  json record_json;

  if (!args.graph_id.empty()) {
    const Graph* graph = nullptr;
    for (const Graph& g : lr.data.graphs)
      if (g.id == args.graph_id) graph = &g;
    if (graph == nullptr) throw IoError("graph id not found in dataset: " + args.graph_id);
    auto record = explain(model, *graph, args.decodes, mix64(seed, 0xec));
    record_json = explanation_to_json(record);
    rationale_index = record.rationale_index;
    for (std::size_t k = 0; k < record.decoded.size(); ++k) {
      const std::string stem = "decoded_" + std::to_string(k);
      std::ofstream dot(out_dir / (stem + ".dot"));
      dot << graph_to_dot(record.decoded[k], "rationale");
      record_json["decoded_files"].push_back(stem + ".dot");
      record_json["decoded_graphs"].push_back(decoded_graph_to_json(
          record.decoded[k], record.rationale_index, record.rationale_class));
    }
  } else {
    if (rationale_index < 0)
      throw ArgumentError("explain: provide --graph-id or --rationale-index");
    auto graphs = decode_rationale(model, rationale_index, std::max(1, args.decodes),
                                   mix64(seed, 0xec));
    record_json["rationale_index"] = rationale_index;
    record_json["rationale_class"] = model.bank.class_of[rationale_index];
    for (std::size_t k = 0; k < graphs.size(); ++k) {
      const std::string stem = "decoded_" + std::to_string(k);
      std::ofstream dot(out_dir / (stem + ".dot"));
      dot << graph_to_dot(graphs[k], "rationale");
      record_json["decoded_files"].push_back(stem + ".dot");
      record_json["decoded_graphs"].push_back(
          decoded_graph_to_json(graphs[k], rationale_index,
                                model.bank.class_of[rationale_index]));
    }
  }

  write_json(out_dir / "explanation.json", record_json);
  std::cout << "rationale " << rationale_index << " (class "
            << record_json["rationale_class"] << "); outputs in " << out_dir.string()
            << "\n";
  return 0;
}

int cmd_explain(const ExplainArgs& args) {
  LoadedRun lr = load_run(args.run, args.data, "");
  if (lr.cfg.precision == "f64") return run_explain<double>(lr, args);
  return run_explain<float>(lr, args);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GraphFNP: calibrated graph classification with decodable rationales"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "Generate or ingest a dataset in TU layout");
  gen->add_option("--kind", gen_args.kind, "ba-motif or tu")->required();
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--count", gen_args.count, "number of graphs (ba-motif)");
  gen->add_option("--seed", gen_args.seed, "generation seed");
  gen->add_option("--ba-min", gen_args.ba_min, "min base-graph nodes");
  gen->add_option("--ba-max", gen_args.ba_max, "max base-graph nodes");
  gen->add_option("--tu-dir", gen_args.tu_dir, "source TU directory (kind=tu)");
  gen->add_option("--tu-name", gen_args.tu_name, "source TU prefix (kind=tu)");
  gen->add_option("--name", gen_args.name, "output TU prefix");

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", train_args.config, "JSON config file")->required();
  tr->add_option("--data", train_args.data, "TU dataset directory")->required();
  tr->add_option("--out", train_args.out, "run output directory")->required();
  std::uint64_t train_seed = 0;
  auto* seed_opt = tr->add_option("--seed", train_seed, "seed override");
  int train_epochs = 0;
  auto* epochs_opt = tr->add_option("--epochs", train_epochs, "epoch-count override");
  tr->add_option("--ablation", train_args.ablation,
                 "ablation flags (no_zD no_C no_zR no_EM)");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Evaluate a trained run on its test split");
  ev->add_option("--run", eval_args.run, "training run directory")->required();
  ev->add_option("--data", eval_args.data, "dataset directory override");
  ev->add_option("--config", eval_args.config, "config file to verify against the run");
  ev->add_option("--out", eval_args.out, "metrics output directory")->required();
  std::uint64_t eval_seed = 0;
  auto* eval_seed_opt = ev->add_option("--seed", eval_seed, "evaluation seed override");
  ev->add_flag("--temperature-scale", eval_args.temperature_scaling,
               "fit a temperature on the validation split and report scaled ECE");
  ev->add_flag("--last", eval_args.use_last, "evaluate the last checkpoint, not the best");

  ExplainArgs explain_args;
  auto* ex = app.add_subcommand("explain", "Decode the rationale behind a prediction");
  ex->add_option("--run", explain_args.run, "training run directory")->required();
  ex->add_option("--data", explain_args.data, "dataset directory override");
  ex->add_option("--out", explain_args.out, "output directory")->required();
  ex->add_option("--graph-id", explain_args.graph_id, "graph to explain");
  ex->add_option("--rationale-index", explain_args.rationale_index,
                 "decode a specific rationale slot");
  ex->add_option("--decodes", explain_args.decodes, "number of decoded structures");
  std::uint64_t explain_seed = 0;
  auto* explain_seed_opt = ex->add_option("--seed", explain_seed, "decode seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*seed_opt) train_args.seed = train_seed;
    if (*epochs_opt) train_args.epochs = train_epochs;
    if (*eval_seed_opt) eval_args.seed = eval_seed;
    if (*explain_seed_opt) explain_args.seed = explain_seed;

    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (tr->parsed()) return cmd_train(train_args);
    if (ev->parsed()) return cmd_eval(eval_args);
    if (ex->parsed()) return cmd_explain(explain_args);
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
