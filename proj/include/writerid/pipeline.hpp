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

// Batch orchestration: dataset manifests, the JSON run configuration and the
// individual stages that turn document images into an evaluation report.
//
// Output directory layout:
//   binarized/{train,test}/<writer>_<doc>.png   ink masks (black ink on white)
//   patches/{train,test}/<writer>_<doc>.spat    sampled patches
//   cnn.scnn, cnn_training_log.csv
//   features/{train,test}/<writer>_<doc>.cafv   hidden-layer activations
//   whitening.swht, gmm.sgmm, kmeans.skms
//   encoded/<writer>_<doc>.senc
//   report.txt, per_query_ap.csv, rankings.txt
//   run_manifest.json

#ifndef WRITERID_PIPELINE_HPP_
#define WRITERID_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "writerid/cnn.hpp"
#include "writerid/encoding.hpp"
#include "writerid/imaging.hpp"
#include "writerid/whitening.hpp"

namespace writerid::pipeline {

struct DocumentEntry {
  std::filesystem::path image;
  std::string writer_id;
  std::string doc_id;
  std::string language;

  // File stem used for every per-document artifact.
  std::string key() const { return writer_id + "_" + doc_id; }
};

struct DatasetManifest {
  std::vector<DocumentEntry> documents;
};

// One document per line: `path[<TAB>writer_id[<TAB>language]]`. Blank lines
// and lines starting with '#' are ignored, relative paths resolve against
// `base_dir`. Writer and document ids come from matching `id_pattern`
// against the file stem; `{writer}` and `{doc}` are placeholders, `*`
// matches anything, all other characters are literal. An explicit writer
// column overrides the pattern's writer; without a `{doc}` match the stem
// becomes the document id. Duplicate (writer, doc) pairs are rejected.
DatasetManifest parse_manifest_text(const std::string& text, const std::filesystem::path& base_dir,
                                    const std::string& id_pattern, const std::string& source = "manifest");
DatasetManifest parse_manifest(const std::filesystem::path& path, const std::string& id_pattern);

enum class Stage { kBinarize, kPatches, kTrainCnn, kFeatures, kWhiten, kTrainGmm, kEncode, kEvaluate };

std::string to_string(Stage stage);
Stage parse_stage(std::string_view name);
const std::vector<Stage>& all_stages();

struct PatchParams {
  bool invert = false;
  int stride = 1;
  std::size_t max_patches = 2000;  // per document, 0 = all
};

struct CnnTraining {
  cnn::CnnConfig config;  // num_classes is set from the training manifest
  cnn::TrainSchedule schedule;
  double holdout_fraction = 0.1;
  std::size_t max_train_patches = 0;  // 0 = all
};

struct GmmParams {
  int components = 100;
  int max_iters = 200;
  double tol = 1e-5;
  double variance_floor_ratio = 1e-4;
};

struct KmeansParams {
  int components = 100;
  int batch_size = 1000;
  int iters = 300;
};

// Paths to artifacts produced elsewhere (e.g. a model fit on another
// dataset). Empty means "produce it in this run".
struct ArtifactOverrides {
  std::filesystem::path cnn;
  std::filesystem::path whitening;
  std::filesystem::path gmm;
  std::filesystem::path kmeans;
};

struct PipelineConfig {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::string id_pattern = "{writer}_{doc}";
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  int jobs = 1;
  PatchParams patches;
  CnnTraining cnn;
  whitening::WhiteningMode whitening_mode = whitening::WhiteningMode::kZca;
  double whitening_epsilon = whitening::kDefaultEpsilon;
  GmmParams gmm;
  KmeansParams kmeans;
  encoding::EncoderKind encoder = encoding::EncoderKind::kSupervectorKl;
  encoding::EncoderParams encoder_params;
  ArtifactOverrides artifacts;

  // Relative paths inside `j` resolve against `base_dir`. Unknown keys are
  // rejected.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  // SHA-256 of the canonical JSON form without output_dir.
  std::string hash() const;
};

// The documented defaults as JSON.
nlohmann::json default_config_json();

// Applies `key.sub=value` overrides; values are parsed as JSON when possible,
// otherwise taken as strings.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Reads a JSON config file, applies overrides, then parses it.
PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Raised when a stage's inputs are missing; names the stage to run first.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

// Runs one stage, writing its outputs atomically and recording the stage's
// seed plus input/output hashes in run_manifest.json.
void run_stage(const PipelineConfig& config, Stage stage);
void run_pipeline(const PipelineConfig& config);

// "SPAT" patch file: magic, u32 version, source doc string, u32 count, then
// per patch i32 row, i32 col and 1024 raw 8-bit intensities.
std::string encode_patches(const std::vector<imaging::Patch>& patches, const std::string& source_doc);
std::vector<imaging::Patch> decode_patches(std::string bytes, const std::string& source = "patches");

// Artifact locations for a config.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path binarized(const std::string& set, const DocumentEntry& d) const;
  std::filesystem::path patches(const std::string& set, const DocumentEntry& d) const;
  std::filesystem::path features(const std::string& set, const DocumentEntry& d) const;
  std::filesystem::path encoded(const DocumentEntry& d) const;
  std::filesystem::path cnn_model() const { return root / "cnn.scnn"; }
  std::filesystem::path cnn_log() const { return root / "cnn_training_log.csv"; }
  std::filesystem::path whitening() const { return root / "whitening.swht"; }
  std::filesystem::path gmm() const { return root / "gmm.sgmm"; }
  std::filesystem::path kmeans() const { return root / "kmeans.skms"; }
  std::filesystem::path report() const { return root / "report.txt"; }
  std::filesystem::path per_query() const { return root / "per_query_ap.csv"; }
  std::filesystem::path rankings() const { return root / "rankings.txt"; }
  std::filesystem::path run_manifest() const { return root / "run_manifest.json"; }
};

}  // namespace writerid::pipeline

#endif  // WRITERID_PIPELINE_HPP_
