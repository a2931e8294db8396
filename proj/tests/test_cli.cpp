#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "graphfnp/checkpoint.hpp"
#include "graphfnp/datasets.hpp"

using namespace graphfnp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// The binary under test, injected by ctest.
std::string cli() {
  const char* env = std::getenv("GRAPHFNP_CLI");
  if (env != nullptr && *env != '\0') return env;
  return "./build/tools/graphfnp";  // manual runs from the repo root
}

int run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "graphfnp_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

void write_small_config(const fs::path& path, const std::string& extra = "") {
  std::ofstream out(path);
  out << R"({
  "latent_dim": 6, "hidden_dim": 10, "gcn_layers": 2, "r_k": 2,
  "epochs": 1, "batch_size": 8, "max_nodes": 24, "seed": 3,
  "mc_samples_eval": 2, "precision": "f32")" << extra << "\n}\n";
}

// One shared tiny run most tests reuse.
struct SharedRun {
  fs::path data = work_dir() / "data";
  fs::path config = work_dir() / "cfg.json";
  fs::path run_dir = work_dir() / "run";

  SharedRun() {
    EXPECT_EQ(run("gen-data --kind ba-motif --count 40 --seed 1 --ba-min 8 --ba-max 10 --out " +
                  data.string()),
              0);
    write_small_config(config);
    EXPECT_EQ(run("train --config " + config.string() + " --data " + data.string() +
                  " --out " + run_dir_string()),
              0);
  }
  std::string run_dir_string() const { return run_dir.string(); }
};

SharedRun& shared_run() {
  static SharedRun instance;
  return instance;
}

}  // namespace

TEST(CliGenData, WritesTuLayoutAndManifest) {
  const fs::path out = work_dir() / "gen1";
  ASSERT_EQ(run("gen-data --kind ba-motif --count 10 --seed 0 --ba-min 6 --ba-max 8 --out " +
                out.string()),
            0);
  EXPECT_TRUE(fs::exists(out / "BAMOTIF_A.txt"));
  EXPECT_TRUE(fs::exists(out / "BAMOTIF_graph_indicator.txt"));
  EXPECT_TRUE(fs::exists(out / "BAMOTIF_graph_labels.txt"));
  ASSERT_TRUE(fs::exists(out / "manifest.json"));
  auto manifest = read_json(out / "manifest.json");
  EXPECT_EQ(manifest.at("count"), 10);
  EXPECT_FALSE(manifest.at("dataset_fingerprint").get<std::string>().empty());

  // parses back to the generated dataset
  auto ds = parse_tu_dataset(out, "BAMOTIF");
  EXPECT_EQ(dataset_fingerprint(ds), manifest.at("dataset_fingerprint").get<std::string>());
}

TEST(CliGenData, MissingOutIsUsageError) {
  EXPECT_EQ(run("gen-data --kind ba-motif --count 10"), 2);
}

TEST(CliGenData, BadKindIsUsageError) {
  EXPECT_EQ(run("gen-data --kind nonsense --out " + (work_dir() / "x").string()), 2);
}

TEST(CliGenData, RerunsProduceIdenticalFingerprint) {
  const fs::path a = work_dir() / "gen_a", b = work_dir() / "gen_b";
  ASSERT_EQ(run("gen-data --kind ba-motif --count 12 --seed 9 --ba-min 6 --ba-max 8 --out " +
                a.string()),
            0);
  ASSERT_EQ(run("gen-data --kind ba-motif --count 12 --seed 9 --ba-min 6 --ba-max 8 --out " +
                b.string()),
            0);
  EXPECT_EQ(read_json(a / "manifest.json").at("dataset_fingerprint"),
            read_json(b / "manifest.json").at("dataset_fingerprint"));
}

TEST(CliGenData, TuKindReemitsDataset) {
  const fs::path out = work_dir() / "gen_tu";
  ASSERT_EQ(run("gen-data --kind tu --tu-dir " + shared_run().data.string() + " --out " +
                out.string()),
            0);
  auto a = parse_tu_dataset(shared_run().data, "BAMOTIF");
  auto b = parse_tu_dataset(out, "BAMOTIF");
  EXPECT_EQ(dataset_fingerprint(a), dataset_fingerprint(b));
}

TEST(CliTrain, ProducesRunArtifacts) {
  const auto& sr = shared_run();
  EXPECT_TRUE(fs::exists(sr.run_dir / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(sr.run_dir / "losses.csv"));
  EXPECT_TRUE(fs::exists(sr.run_dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(sr.run_dir / "run.json"));
  auto manifest = read_json(sr.run_dir / "run.json");
  EXPECT_EQ(manifest.at("dataset_fingerprint"),
            dataset_fingerprint(parse_tu_dataset(sr.data, "BAMOTIF")));
}

TEST(CliTrain, EpochsZeroOverrideStillWritesCheckpoint) {
  const fs::path out = work_dir() / "run_e0";
  ASSERT_EQ(run("train --config " + shared_run().config.string() + " --data " +
                shared_run().data.string() + " --out " + out.string() + " --epochs 0"),
            0);
  EXPECT_TRUE(fs::exists(out / "checkpoint.bin"));
  EXPECT_NO_THROW(load_parameter_arrays(out / "checkpoint.bin"));
}

TEST(CliTrain, AblationFlagIsRecorded) {
  const fs::path out = work_dir() / "run_abl";
  ASSERT_EQ(run("train --config " + shared_run().config.string() + " --data " +
                shared_run().data.string() + " --out " + out.string() +
                " --epochs 1 --ablation no_C"),
            0);
  auto manifest = read_json(out / "run.json");
  const auto ablation = manifest.at("config").at("ablation");
  EXPECT_NE(std::find(ablation.begin(), ablation.end(), "no_C"), ablation.end());
}

TEST(CliTrain, MalformedConfigNamesKeyAndExits2) {
  const fs::path bad = work_dir() / "bad.json";
  std::ofstream(bad) << R"({"latent_dim": 6, "unknown_knob": 3})";
  EXPECT_EQ(run("train --config " + bad.string() + " --data " + shared_run().data.string() +
                " --out " + (work_dir() / "run_bad").string()),
            2);
}

TEST(CliTrain, MissingDataIsRuntimeError) {
  EXPECT_EQ(run("train --config " + shared_run().config.string() + " --data " +
                (work_dir() / "no_such_dir").string() + " --out " +
                (work_dir() / "run_nodata").string()),
            1);
}

TEST(CliEval, WritesMetricsAndReliability) {
  const fs::path out = work_dir() / "eval1";
  ASSERT_EQ(run("eval --run " + shared_run().run_dir_string() + " --out " + out.string()), 0);
  ASSERT_TRUE(fs::exists(out / "metrics.json"));
  EXPECT_TRUE(fs::exists(out / "reliability.csv"));
  EXPECT_TRUE(fs::exists(out / "explanations.json"));
  auto metrics = read_json(out / "metrics.json");
  EXPECT_TRUE(metrics.contains("accuracy"));
  EXPECT_TRUE(metrics.contains("ece"));
  EXPECT_TRUE(metrics.contains("rf1_at_1"));
}

TEST(CliEval, TemperatureScaleReportsBothEces) {
  const fs::path out = work_dir() / "eval_ts";
  ASSERT_EQ(run("eval --run " + shared_run().run_dir_string() + " --out " + out.string() +
                " --temperature-scale"),
            0);
  auto metrics = read_json(out / "metrics.json");
  EXPECT_TRUE(metrics.contains("ece_raw"));
  EXPECT_TRUE(metrics.contains("ece_scaled"));
  EXPECT_TRUE(metrics.contains("temperature"));
}

TEST(CliEval, MissingRunIsRuntimeError) {
  EXPECT_EQ(run("eval --run " + (work_dir() / "no_such_run").string() + " --out " +
                (work_dir() / "eval_missing").string()),
            1);
}

TEST(CliEval, MismatchedConfigHashIsRuntimeError) {
  const fs::path other_cfg = work_dir() / "other_cfg.json";
  write_small_config(other_cfg, ", \"gamma\": 2.0");
  EXPECT_EQ(run("eval --run " + shared_run().run_dir_string() + " --config " +
                other_cfg.string() + " --out " + (work_dir() / "eval_mismatch").string()),
            1);
}

TEST(CliEval, IdempotentAcrossReruns) {
  const fs::path out_a = work_dir() / "eval_rep_a", out_b = work_dir() / "eval_rep_b";
  ASSERT_EQ(run("eval --run " + shared_run().run_dir_string() + " --out " + out_a.string()), 0);
  ASSERT_EQ(run("eval --run " + shared_run().run_dir_string() + " --out " + out_b.string()), 0);
  EXPECT_EQ(read_json(out_a / "metrics.json"), read_json(out_b / "metrics.json"));
}

TEST(CliExplain, RationaleIndexProducesDotFiles) {
  const fs::path out = work_dir() / "exp_idx";
  ASSERT_EQ(run("explain --run " + shared_run().run_dir_string() +
                " --rationale-index 1 --decodes 5 --out " + out.string()),
            0);
  for (int k = 0; k < 5; ++k)
    EXPECT_TRUE(fs::exists(out / ("decoded_" + std::to_string(k) + ".dot")));
  auto record = read_json(out / "explanation.json");
  EXPECT_EQ(record.at("rationale_index"), 1);
  EXPECT_EQ(record.at("decoded_graphs").size(), 5u);
}

TEST(CliExplain, GraphIdProducesRecord) {
  const fs::path out = work_dir() / "exp_gid";
  ASSERT_EQ(run("explain --run " + shared_run().run_dir_string() +
                " --graph-id BAMOTIF-0 --decodes 2 --out " + out.string()),
            0);
  auto record = read_json(out / "explanation.json");
  EXPECT_EQ(record.at("graph_id"), "BAMOTIF-0");
  EXPECT_TRUE(record.contains("argmax_rationale_index"));
  EXPECT_TRUE(record.contains("confidence"));
}

TEST(CliExplain, UnknownGraphIdIsRuntimeError) {
  EXPECT_EQ(run("explain --run " + shared_run().run_dir_string() +
                " --graph-id nope --out " + (work_dir() / "exp_bad").string()),
            1);
}

TEST(CliExplain, NoZrCheckpointRefuses) {
  const fs::path out = work_dir() / "run_nozr";
  ASSERT_EQ(run("train --config " + shared_run().config.string() + " --data " +
                shared_run().data.string() + " --out " + out.string() +
                " --epochs 1 --ablation no_zR"),
            0);
  EXPECT_EQ(run("explain --run " + out.string() + " --rationale-index 0 --out " +
                (work_dir() / "exp_nozr").string()),
            1);
  // eval still works, skipping RF1
  const fs::path eval_out = work_dir() / "eval_nozr";
  ASSERT_EQ(run("eval --run " + out.string() + " --out " + eval_out.string()), 0);
  auto metrics = read_json(eval_out / "metrics.json");
  EXPECT_FALSE(metrics.contains("rf1_at_1"));
  EXPECT_TRUE(metrics.contains("rf1_skipped"));
}

TEST(CliExit, NoSubcommandIsUsageError) { EXPECT_EQ(run(""), 2); }

TEST(CliExit, UnknownFlagIsUsageError) {
  EXPECT_EQ(run("gen-data --kind ba-motif --out x --frobnicate"), 2);
}
