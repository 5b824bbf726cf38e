// Copyright 2026 The writerid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Batch command line front end.
//
//   writerid <stage> --config run.json [--stage-override key=value]... [--seed N] [--jobs N]
//   writerid pipeline --config run.json
//   writerid synth --out demo/      # writes a small synthetic dataset and config

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "writerid/binary_io.hpp"
#include "writerid/pipeline.hpp"
#include "writerid/synthetic.hpp"

namespace {

namespace fs = std::filesystem;
namespace wp = writerid::pipeline;

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

void add_run_flags(CLI::App* cmd, RunArgs& args) {
  cmd->add_option("--config", args.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--stage-override", args.overrides, "Override a config value, e.g. gmm.components=32")
      ->take_all();
  cmd->add_option("--seed", args.seed, "Root seed (overrides the config)");
  cmd->add_option("--jobs", args.jobs, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
}

wp::PipelineConfig resolve_config(const RunArgs& args) {
  std::vector<std::string> overrides = args.overrides;
  if (args.seed) overrides.push_back("seed=" + std::to_string(*args.seed));
  if (args.jobs) overrides.push_back("jobs=" + std::to_string(*args.jobs));
  return wp::load_config(args.config, overrides);
}

struct SynthArgs {
  std::string out = "synthetic";
  std::size_t train_writers = 20;
  std::size_t test_writers = 20;
  std::size_t docs = 4;
  std::uint64_t seed = 1;
};

void synth(const SynthArgs& a) {
  const fs::path root(a.out);
  writerid::synthetic::DatasetSpec train;
  train.writers = a.train_writers;
  train.docs_per_writer = a.docs;
  train.writer_prefix = "t";
  train.seed = writerid::derive_seed(a.seed, "synthetic-train");
  writerid::synthetic::DatasetSpec test = train;
  test.writers = a.test_writers;
  test.writer_prefix = "w";
  test.seed = writerid::derive_seed(a.seed, "synthetic-test");
  writerid::synthetic::write_dataset(train, root / "train", "manifest.txt");
  writerid::synthetic::write_dataset(test, root / "test", "manifest.txt");

  nlohmann::json cfg = {
      {"train_manifest", "train/manifest.txt"},
      {"test_manifest", "test/manifest.txt"},
      {"output_dir", "out"},
      {"seed", a.seed},
      {"patches", {{"max_patches", 300}}},
      {"cnn", {{"filters", {8, 32}}, {"hidden", 64}}},
      {"gmm", {{"components", 16}}},
      {"kmeans", {{"components", 16}}},
  };
  writerid::io::write_file_atomic(root / "config.json", cfg.dump(2) + "\n");
  std::printf("wrote %s\n", (root / "config.json").string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline writer identification: CNN activation features, GMM supervectors, retrieval evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  RunArgs run_args;
  std::vector<std::pair<CLI::App*, wp::Stage>> stage_cmds;
  for (wp::Stage stage : wp::all_stages()) {
    auto* cmd = app.add_subcommand(wp::to_string(stage), "Run the " + wp::to_string(stage) + " stage");
    add_run_flags(cmd, run_args);
    stage_cmds.emplace_back(cmd, stage);
  }
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run every stage in order");
  add_run_flags(pipeline_cmd, run_args);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic demo dataset with manifests and a config");
  synth_cmd->add_option("--out", synth_args.out, "Output directory");
  synth_cmd->add_option("--train-writers", synth_args.train_writers)->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--test-writers", synth_args.test_writers)->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--docs", synth_args.docs, "Documents per writer")->check(CLI::Range(2, 1000));
  synth_cmd->add_option("--seed", synth_args.seed);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (synth_cmd->parsed()) {
      synth(synth_args);
      return 0;
    }
    const auto config = resolve_config(run_args);
    if (pipeline_cmd->parsed()) {
      wp::run_pipeline(config);
    } else {
      for (const auto& [cmd, stage] : stage_cmds) {
        if (cmd->parsed()) wp::run_stage(config, stage);
      }
    }
    if (pipeline_cmd->parsed() || stage_cmds.back().first->parsed()) {
      const auto report = wp::Layout{config.output_dir}.report();
      std::fputs(writerid::io::read_file(report).c_str(), stdout);
    }
  } catch (const wp::MissingArtifactError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const writerid::ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
