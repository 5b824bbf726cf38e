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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <map>

#include "support.hpp"
#include "writerid/binary_io.hpp"
#include "writerid/pipeline.hpp"
#include "writerid/synthetic.hpp"

using namespace writerid;
using namespace writerid::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Small, fast settings for pipeline runs in tests.
json tiny_config(const fs::path& train, const fs::path& test, const fs::path& out) {
  return json{
      {"train_manifest", train.string()},
      {"test_manifest", test.string()},
      {"output_dir", out.string()},
      {"seed", 5},
      {"patches", {{"max_patches", 60}, {"stride", 2}}},
      {"cnn",
       {{"filters", {4, 8}}, {"hidden", 16}, {"epochs", 2}, {"momentum_epochs", 1}, {"batch_size", 32}}},
      {"gmm", {{"components", 4}, {"max_iters", 30}}},
      {"kmeans", {{"components", 4}, {"iters", 50}, {"batch_size", 100}}},
      {"encoder", {{"top_c", 2}}},
  };
}

fs::path make_dataset(const fs::path& dir, const std::string& prefix, std::size_t writers, std::uint64_t seed) {
  synthetic::DatasetSpec spec;
  spec.writers = writers;
  spec.docs_per_writer = 3;
  spec.writer_prefix = prefix;
  spec.layout = {160, 160, 12};
  spec.seed = seed;
  return synthetic::write_dataset(spec, dir, "manifest.txt");
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("manifest: pattern split, writer column, language, comments") {
  const auto m = parse_manifest_text("# header\n003_2.png\n\nimgs/017_1.png\tW9\tde\n/abs/005_4.pgm\n", "/data",
                                     "{writer}_{doc}");
  REQUIRE(m.documents.size() == 3);
  CHECK(m.documents[0].writer_id == "003");
  CHECK(m.documents[0].doc_id == "2");
  CHECK(m.documents[0].image == fs::path("/data/003_2.png"));
  CHECK(m.documents[1].writer_id == "W9");
  CHECK(m.documents[1].doc_id == "1");
  CHECK(m.documents[1].language == "de");
  CHECK(m.documents[1].key() == "W9_1");
  CHECK(m.documents[2].image == fs::path("/abs/005_4.pgm"));

  const auto cvl = parse_manifest_text("0052-3-cropped.png\n", "", "{writer}-{doc}-*");
  CHECK(cvl.documents[0].writer_id == "0052");
  CHECK(cvl.documents[0].doc_id == "3");

  const auto stem_only = parse_manifest_text("scan.png\tA\n", "", "{writer}_{doc}");
  CHECK(stem_only.documents[0].doc_id == "scan");
}

TEST_CASE("manifest: errors carry line numbers") {
  try {
    parse_manifest_text("001_1.png\n001_2.png\nnounderscore.png\n", "", "{writer}_{doc}", "m.txt");
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("m.txt:3") != std::string::npos);
  }
  try {
    parse_manifest_text("001_1.png\n001_1.png\n", "", "{writer}_{doc}", "m.txt");
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    CHECK(std::string(e.what()).find("m.txt:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_manifest_text("a_1.png\tw\tde\textra\n", "", "{writer}_{doc}"), FormatError);
  CHECK_THROWS_AS(parse_manifest_text("a.png\n", "", "{writer}_{writer}"), ConfigError);
}

TEST_CASE("manifest: empty file gives an empty manifest") {
  const auto dir = writerid::testing::scratch_dir("empty_manifest");
  io::write_file_atomic(dir / "m.txt", "");
  CHECK(parse_manifest(dir / "m.txt", "{writer}_{doc}").documents.empty());
  io::write_file_atomic(dir / "c.txt", "# nothing\n\n");
  CHECK(parse_manifest(dir / "c.txt", "{writer}_{doc}").documents.empty());
}

TEST_CASE("config: defaults, strict keys, overrides, hash") {
  const auto c = PipelineConfig::from_json(json::object());
  CHECK(c.cnn.config.c1_size == 7);
  CHECK(c.cnn.config.p2_size == 3);
  CHECK(c.cnn.config.c2_filters == 256);
  CHECK(c.cnn.schedule.learning_rate == 0.01);
  CHECK(c.cnn.schedule.epochs == 20);
  CHECK(c.cnn.schedule.nesterov_momentum == 0.9);
  CHECK(c.cnn.schedule.momentum_epochs == 5);
  CHECK(c.gmm.components == 100);
  CHECK(c.encoder_params.tau == 68.0);
  CHECK(c.encoder_params.top_c == 10);
  CHECK(c.whitening_mode == whitening::WhiteningMode::kZca);
  CHECK(c.encoder == encoding::EncoderKind::kSupervectorKl);

  CHECK_THROWS_AS(PipelineConfig::from_json(json{{"gmm", {{"componentz", 3}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json(json{{"seeed", 3}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json(json{{"gmm", {{"components", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json(json{{"cnn", {{"sizes", {5, 2, 5}}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json(json{{"encoder", {{"type", "bow"}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json(json{{"jobs", 0}}), ConfigError);

  json j = json::object();
  apply_override(j, "gmm.components=12");
  apply_override(j, "encoder.type=vlad");
  apply_override(j, "whitening.mode=pca");
  apply_override(j, "patches.invert=true");
  const auto o = PipelineConfig::from_json(j);
  CHECK(o.gmm.components == 12);
  CHECK(o.encoder == encoding::EncoderKind::kVlad);
  CHECK(o.whitening_mode == whitening::WhiteningMode::kPca);
  CHECK(o.patches.invert);
  CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);

  const auto ssr = PipelineConfig::from_json(json{{"encoder", {{"type", "sv_ssr"}}}});
  CHECK(ssr.encoder_params.normalization == encoding::Normalization::kSsrL2);

  auto a = PipelineConfig::from_json(json{{"output_dir", "x"}});
  auto b = PipelineConfig::from_json(json{{"output_dir", "y"}, {"jobs", 4}});
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != PipelineConfig::from_json(json{{"seed", 1}}).hash());
  CHECK(PipelineConfig::from_json(a.to_json()).to_json() == a.to_json());

  const auto dir = writerid::testing::scratch_dir("config_file");
  io::write_file_atomic(dir / "run.json", R"({"train_manifest": "train/m.txt", "seed": 3})");
  const auto loaded = load_config(dir / "run.json", {"seed=9", "output_dir=o"});
  CHECK(loaded.seed == 9);
  CHECK(loaded.train_manifest == dir / "train/m.txt");
  CHECK(loaded.output_dir == dir / "o");
  io::write_file_atomic(dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("stage names") {
  CHECK(all_stages().size() == 8);
  for (Stage s : all_stages()) CHECK(parse_stage(to_string(s)) == s);
  CHECK(to_string(Stage::kTrainCnn) == "train-cnn");
  CHECK_THROWS_AS(parse_stage("train"), ConfigError);
}

TEST_CASE("SPAT round trip and corruption") {
  std::mt19937_64 rng(1);
  std::vector<imaging::Patch> patches(3);
  for (auto& p : patches) {
    for (auto& v : p.pixels) v = static_cast<float>(writerid::testing::uniform_int(rng, 0, 255)) / 255.0f;
    p.center = {writerid::testing::uniform_int(rng, 0, 99), writerid::testing::uniform_int(rng, 0, 99)};
  }
  const std::string bytes = encode_patches(patches, "w_1");
  CHECK(bytes.substr(0, 4) == "SPAT");
  const auto back = decode_patches(bytes);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].center == patches[i].center);
    CHECK(back[i].pixels == patches[i].pixels);
    CHECK(back[i].source_doc == "w_1");
  }
  CHECK(encode_patches(back, "w_1") == bytes);
  std::string bad = bytes;
  bad[2] = '?';
  CHECK_THROWS_AS(decode_patches(bad), FormatError);
  CHECK_THROWS_AS(decode_patches(bytes.substr(0, bytes.size() - 10)), FormatError);
}

TEST_CASE("missing upstream artifacts name the stage to run") {
  const auto dir = writerid::testing::scratch_dir("missing");
  const auto train = make_dataset(dir / "train", "t", 2, 1);
  const auto cfg = PipelineConfig::from_json(tiny_config(train, train, dir / "out"));
  try {
    run_stage(cfg, Stage::kPatches);
    FAIL("expected MissingArtifactError");
  } catch (const MissingArtifactError& e) {
    CHECK(std::string(e.what()).find("'binarize'") != std::string::npos);
  }
  try {
    run_stage(cfg, Stage::kFeatures);
    FAIL("expected MissingArtifactError");
  } catch (const MissingArtifactError& e) {
    CHECK(std::string(e.what()).find("'train-cnn'") != std::string::npos);
  }
  CHECK_THROWS_AS(run_stage(cfg, Stage::kEvaluate), MissingArtifactError);
  CHECK_THROWS_AS(run_stage(cfg, Stage::kWhiten), MissingArtifactError);
}

TEST_CASE("full pipeline: determinism, reruns, cross-dataset reuse, corruption") {
  const auto dir = writerid::testing::scratch_dir("pipeline");
  const auto train = make_dataset(dir / "train", "t", 4, 11);
  const auto test = make_dataset(dir / "test", "w", 4, 12);

  const auto a = PipelineConfig::from_json(tiny_config(train, test, dir / "run_a"));
  json jb = tiny_config(train, test, dir / "run_b");
  jb["jobs"] = 3;
  const auto b = PipelineConfig::from_json(jb);
  run_pipeline(a);
  run_pipeline(b);
  const auto files_a = snapshot(dir / "run_a");
  const auto files_b = snapshot(dir / "run_b");
  CHECK(files_a.size() == files_b.size());
  for (const auto& [name, content] : files_a) {
    INFO(name);
    REQUIRE(files_b.count(name) == 1);
    CHECK(files_b.at(name) == content);
  }
  for (const char* expected : {"cnn.scnn", "cnn_training_log.csv", "whitening.swht", "gmm.sgmm", "report.txt",
                               "per_query_ap.csv", "rankings.txt", "run_manifest.json", "binarized/test/w000_1.png",
                               "patches/train/t000_1.spat", "features/test/w003_3.cafv", "encoded/w001_2.senc"}) {
    CHECK(files_a.count(expected) == 1);
  }
  const auto report = files_a.at("report.txt");
  CHECK(report.find("queries=12\n") != std::string::npos);
  CHECK(report.find("mAP=") != std::string::npos);
  CHECK(report.find("top1=") != std::string::npos);
  CHECK(report.find("top2=") != std::string::npos);

  const auto manifest = json::parse(files_a.at("run_manifest.json"));
  CHECK(manifest["config_hash"] == a.hash());
  CHECK(manifest["stages"].size() == 8);
  CHECK(manifest["stages"]["train-gmm"]["seed"] == derive_seed(5, "train-gmm"));
  CHECK(manifest["stages"]["whiten"]["inputs"].contains("features/train/t000_1.cafv"));

  // Rerunning a stage rewrites identical bytes.
  run_stage(a, Stage::kFeatures);
  run_stage(a, Stage::kEncode);
  CHECK(snapshot(dir / "run_a") == files_a);

  // Another encoder over the same features.
  json jv = tiny_config(train, test, dir / "run_a");
  jv["encoder"]["type"] = "vlad";
  const auto vlad = PipelineConfig::from_json(jv);
  run_stage(vlad, Stage::kTrainGmm);
  run_stage(vlad, Stage::kEncode);
  run_stage(vlad, Stage::kEvaluate);
  CHECK(fs::exists(dir / "run_a" / "kmeans.skms"));
  jv["encoder"]["type"] = "fisher";
  run_stage(PipelineConfig::from_json(jv), Stage::kEncode);
  CHECK(encoding::load_global_descriptor(dir / "run_a" / "encoded" / "w000_1.senc").encoder ==
        encoding::EncoderKind::kFisher);

  // CNN, whitening and GMM fit on one dataset, applied to another.
  const auto other = make_dataset(dir / "other", "o", 3, 13);
  json jx = tiny_config("", other, dir / "run_x");
  jx["artifacts"] = {{"cnn", (dir / "run_b" / "cnn.scnn").string()},
                     {"whitening", (dir / "run_b" / "whitening.swht").string()},
                     {"gmm", (dir / "run_b" / "gmm.sgmm").string()}};
  jx["train_manifest"] = "";
  const auto cross = PipelineConfig::from_json(jx);
  run_pipeline(cross);
  CHECK(fs::exists(dir / "run_x" / "report.txt"));
  CHECK_FALSE(fs::exists(dir / "run_x" / "gmm.sgmm"));
  CHECK(io::read_file(dir / "run_x" / "report.txt").find("queries=9\n") != std::string::npos);

  // A corrupted magic header stops the consuming stage.
  const auto victim = dir / "run_b" / "features" / "test" / "w002_1.cafv";
  std::string bytes = io::read_file(victim);
  bytes[0] = 'Z';
  io::write_file_atomic(victim, bytes);
  CHECK_THROWS_AS(run_stage(b, Stage::kEncode), FormatError);
  std::string model = io::read_file(dir / "run_b" / "cnn.scnn");
  model[1] = 'Z';
  io::write_file_atomic(dir / "run_b" / "cnn.scnn", model);
  CHECK_THROWS_AS(run_stage(b, Stage::kFeatures), FormatError);
}

TEST_CASE("planted duplicates retrieve perfectly") {
  const auto dir = writerid::testing::scratch_dir("duplicates");
  const auto train = make_dataset(dir / "train", "t", 3, 21);
  const auto styles = synthetic::sample_styles(5, 22);
  std::string manifest;
  for (int w = 0; w < 5; ++w) {
    const auto page = synthetic::render_document(styles[w], {160, 160, 12}, 100 + w);
    for (int d = 1; d <= 4; ++d) {
      const std::string name = "d" + std::to_string(w) + "_" + std::to_string(d) + ".png";
      imaging::save_png(page, dir / name);
      manifest += name + "\n";
    }
  }
  io::write_file_atomic(dir / "dup.txt", manifest);
  // Every patch is kept so duplicated pages yield identical patch sets.
  json j = tiny_config(train, dir / "dup.txt", dir / "out");
  j["patches"]["max_patches"] = 0;
  j["patches"]["stride"] = 4;
  run_pipeline(PipelineConfig::from_json(j));
  const auto report = io::read_file(dir / "out" / "report.txt");
  CHECK(report.find("mAP=1.000000\n") != std::string::npos);
  CHECK(report.find("top3=1.000000\n") != std::string::npos);
}

TEST_CASE("command line exit codes") {
  const std::string cli = WRITERID_CLI;
  const auto dir = writerid::testing::scratch_dir("cli");
  const auto train = make_dataset(dir / "train", "t", 2, 31);
  io::write_file_atomic(dir / "run.json", tiny_config(train, train, dir / "out").dump());
  auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("binarize --config " + (dir / "run.json").string() + " --jobs 2") == 0);
  CHECK(fs::exists(dir / "out" / "binarized" / "train" / "t000_1.png"));
  CHECK(run("features --config " + (dir / "run.json").string()) == 3);
  CHECK(io::read_file(dir / "log.txt").find("train-cnn") != std::string::npos);
  CHECK(run("binarize --config " + (dir / "run.json").string() + " --stage-override gmm.nope=1") == 2);
  CHECK(run("binarize --config " + (dir / "missing.json").string()) != 0);
  CHECK(run("frobnicate") != 0);
  CHECK(run("synth --out " + (dir / "demo").string() + " --train-writers 2 --test-writers 2 --docs 2") == 0);
  CHECK(fs::exists(dir / "demo" / "config.json"));
  CHECK_NOTHROW(load_config(dir / "demo" / "config.json"));
}
