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

#include "writerid/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "writerid/binary_io.hpp"
#include "writerid/gmm.hpp"
#include "writerid/parallel.hpp"
#include "writerid/retrieval.hpp"

namespace writerid::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string regex_escape(char c) {
  static const std::string special = R"(\^$.|?*+()[]{}/)";
  return special.find(c) != std::string::npos ? std::string("\\") + c : std::string(1, c);
}

struct IdPattern {
  std::regex re;
  int writer_group = 0;
  int doc_group = 0;
};

IdPattern compile_pattern(const std::string& pattern) {
  IdPattern out;
  std::string re;
  int group = 0;
  for (std::size_t i = 0; i < pattern.size();) {
    if (pattern.compare(i, 8, "{writer}") == 0) {
      if (out.writer_group) throw ConfigError("id_pattern: {writer} appears twice in '" + pattern + "'");
      out.writer_group = ++group;
      re += "(.+?)";
      i += 8;
    } else if (pattern.compare(i, 5, "{doc}") == 0) {
      if (out.doc_group) throw ConfigError("id_pattern: {doc} appears twice in '" + pattern + "'");
      out.doc_group = ++group;
      re += "(.+?)";
      i += 5;
    } else if (pattern[i] == '*') {
      re += ".*?";
      ++i;
    } else {
      re += regex_escape(pattern[i]);
      ++i;
    }
  }
  out.re = std::regex(re);
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    parts.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return parts;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

DatasetManifest parse_manifest_text(const std::string& text, const fs::path& base_dir, const std::string& id_pattern,
                                    const std::string& source) {
  const IdPattern pattern = compile_pattern(id_pattern);
  DatasetManifest manifest;
  std::set<std::pair<std::string, std::string>> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto where = source + ":" + std::to_string(line_no);
    const auto cols = split_tabs(line);
    if (cols.size() > 3) throw FormatError(where + ": expected path[<TAB>writer_id[<TAB>language]]");

    DocumentEntry doc;
    const fs::path rel = trim(cols[0]);
    if (rel.empty()) throw FormatError(where + ": empty image path");
    doc.image = rel.is_absolute() ? rel : base_dir / rel;
    const std::string stem = rel.stem().string();
    std::smatch m;
    const bool matched = std::regex_match(stem, m, pattern.re);
    if (cols.size() >= 2 && !trim(cols[1]).empty()) {
      doc.writer_id = trim(cols[1]);
    } else if (matched && pattern.writer_group) {
      doc.writer_id = m[pattern.writer_group].str();
    } else {
      throw FormatError(where + ": cannot extract a writer id from '" + stem + "' with pattern '" + id_pattern + "'");
    }
    doc.doc_id = (matched && pattern.doc_group) ? m[pattern.doc_group].str() : stem;
    if (cols.size() == 3) doc.language = trim(cols[2]);
    if (!seen.emplace(doc.writer_id, doc.doc_id).second) {
      throw FormatError(where + ": duplicate document (writer " + doc.writer_id + ", doc " + doc.doc_id + ")");
    }
    manifest.documents.push_back(std::move(doc));
  }
  if (manifest.documents.empty()) spdlog::warn("{}: manifest lists no documents", source);
  return manifest;
}

DatasetManifest parse_manifest(const fs::path& path, const std::string& id_pattern) {
  return parse_manifest_text(io::read_file(path), path.parent_path(), id_pattern, path.string());
}

// ---------------------------------------------------------------------------
// Stages

namespace {

const std::vector<std::pair<Stage, std::string>>& stage_names() {
  static const std::vector<std::pair<Stage, std::string>> names = {
      {Stage::kBinarize, "binarize"}, {Stage::kPatches, "patches"},   {Stage::kTrainCnn, "train-cnn"},
      {Stage::kFeatures, "features"}, {Stage::kWhiten, "whiten"},     {Stage::kTrainGmm, "train-gmm"},
      {Stage::kEncode, "encode"},     {Stage::kEvaluate, "evaluate"},
  };
  return names;
}

}  // namespace

std::string to_string(Stage stage) {
  for (const auto& [s, name] : stage_names()) {
    if (s == stage) return name;
  }
  throw ConfigError("unknown stage");
}

Stage parse_stage(std::string_view name) {
  for (const auto& [s, n] : stage_names()) {
    if (n == name) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> out;
    for (const auto& [s, name] : stage_names()) out.push_back(s);
    return out;
  }();
  return stages;
}

// ---------------------------------------------------------------------------
// Config

json default_config_json() {
  const cnn::CnnConfig c = cnn::CnnConfig::config_b();
  const cnn::TrainSchedule t;
  const encoding::EncoderParams e;
  return json{
      {"train_manifest", ""},
      {"test_manifest", ""},
      {"id_pattern", "{writer}_{doc}"},
      {"output_dir", "out"},
      {"seed", 0},
      {"jobs", 1},
      {"patches", {{"invert", false}, {"stride", 1}, {"max_patches", 2000}}},
      {"cnn",
       {{"sizes", {c.c1_size, c.p1_size, c.c2_size, c.p2_size}},
        {"filters", {c.c1_filters, c.c2_filters}},
        {"hidden", c.hidden_nodes},
        {"lr", t.learning_rate},
        {"epochs", t.epochs},
        {"momentum", t.nesterov_momentum},
        {"momentum_epochs", t.momentum_epochs},
        {"batch_size", t.batch_size},
        {"holdout_fraction", 0.1},
        {"max_train_patches", 0}}},
      {"whitening", {{"mode", "zca"}, {"epsilon", whitening::kDefaultEpsilon}}},
      {"gmm", {{"components", 100}, {"max_iters", 200}, {"tol", 1e-5}, {"variance_floor_ratio", 1e-4}}},
      {"kmeans", {{"components", 100}, {"batch_size", 1000}, {"iters", 300}}},
      {"encoder",
       {{"type", "sv_kl"}, {"tau", e.tau}, {"top_c", e.top_c}, {"renormalize", e.renormalize_truncated},
        {"power", e.power}}},
      {"artifacts", {{"cnn", ""}, {"whitening", ""}, {"gmm", ""}, {"kmeans", ""}}},
  };
}

namespace {

bool compatible(const json& def, const json& val) {
  if (def.is_number()) return val.is_number();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  return def.type() == val.type();
}

void merge_strict(json& base, const json& in, const std::string& prefix) {
  if (!in.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : in.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + name + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, name);
    } else {
      if (!compatible(slot, value)) {
        throw ConfigError("config: '" + name + "' expects a " + std::string(slot.type_name()) + ", got " +
                          value.type_name());
      }
      slot = value;
    }
  }
}

fs::path resolve(const std::string& p, const fs::path& base_dir) {
  if (p.empty()) return {};
  fs::path path(p);
  return (path.is_absolute() || base_dir.empty()) ? path : base_dir / path;
}

template <typename T>
T positive(const json& j, const std::string& name) {
  const T v = j.get<T>();
  if (v < T{1}) throw ConfigError("config: '" + name + "' must be >= 1");
  return v;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& input, const fs::path& base_dir) {
  json j = default_config_json();
  merge_strict(j, input, "");

  PipelineConfig c;
  c.train_manifest = resolve(j["train_manifest"], base_dir);
  c.test_manifest = resolve(j["test_manifest"], base_dir);
  c.id_pattern = j["id_pattern"];
  c.output_dir = resolve(j["output_dir"], base_dir);
  if (c.output_dir.empty()) throw ConfigError("config: 'output_dir' must not be empty");
  c.seed = j["seed"].get<std::uint64_t>();
  c.jobs = positive<int>(j["jobs"], "jobs");

  const json& p = j["patches"];
  c.patches.invert = p["invert"];
  c.patches.stride = positive<int>(p["stride"], "patches.stride");
  c.patches.max_patches = p["max_patches"].get<std::size_t>();

  const json& n = j["cnn"];
  const auto sizes = n["sizes"].get<std::vector<int>>();
  const auto filters = n["filters"].get<std::vector<int>>();
  if (sizes.size() != 4) throw ConfigError("config: 'cnn.sizes' needs [conv1, pool1, conv2, pool2]");
  if (filters.size() != 2) throw ConfigError("config: 'cnn.filters' needs [conv1, conv2]");
  c.cnn.config.c1_size = sizes[0];
  c.cnn.config.p1_size = sizes[1];
  c.cnn.config.c2_size = sizes[2];
  c.cnn.config.p2_size = sizes[3];
  c.cnn.config.c1_filters = filters[0];
  c.cnn.config.c2_filters = filters[1];
  c.cnn.config.hidden_nodes = n["hidden"];
  c.cnn.config.num_classes = 2;  // placeholder until the training manifest is read
  c.cnn.config.validate();
  c.cnn.schedule.learning_rate = n["lr"];
  c.cnn.schedule.epochs = n["epochs"];
  c.cnn.schedule.nesterov_momentum = n["momentum"];
  c.cnn.schedule.momentum_epochs = n["momentum_epochs"];
  c.cnn.schedule.batch_size = n["batch_size"];
  c.cnn.schedule.validate();
  c.cnn.holdout_fraction = n["holdout_fraction"];
  if (!(c.cnn.holdout_fraction >= 0.0 && c.cnn.holdout_fraction < 1.0)) {
    throw ConfigError("config: 'cnn.holdout_fraction' must be in [0, 1)");
  }
  c.cnn.max_train_patches = n["max_train_patches"].get<std::size_t>();

  c.whitening_mode = whitening::parse_mode(j["whitening"]["mode"].get<std::string>());
  c.whitening_epsilon = j["whitening"]["epsilon"];
  if (!(c.whitening_epsilon >= 0.0)) throw ConfigError("config: 'whitening.epsilon' must be >= 0");

  const json& g = j["gmm"];
  c.gmm.components = positive<int>(g["components"], "gmm.components");
  c.gmm.max_iters = positive<int>(g["max_iters"], "gmm.max_iters");
  c.gmm.tol = g["tol"];
  c.gmm.variance_floor_ratio = g["variance_floor_ratio"];

  const json& k = j["kmeans"];
  c.kmeans.components = positive<int>(k["components"], "kmeans.components");
  c.kmeans.batch_size = positive<int>(k["batch_size"], "kmeans.batch_size");
  c.kmeans.iters = positive<int>(k["iters"], "kmeans.iters");

  const json& e = j["encoder"];
  c.encoder = encoding::parse_encoder(e["type"].get<std::string>());
  c.encoder_params.tau = e["tau"];
  if (c.encoder_params.tau < 0.0) throw ConfigError("config: 'encoder.tau' must be >= 0");
  c.encoder_params.top_c = positive<int>(e["top_c"], "encoder.top_c");
  c.encoder_params.renormalize_truncated = e["renormalize"];
  c.encoder_params.power = e["power"];
  c.encoder_params.normalization = c.encoder == encoding::EncoderKind::kSupervectorSsr
                                       ? encoding::Normalization::kSsrL2
                                       : encoding::Normalization::kKl;

  const json& a = j["artifacts"];
  c.artifacts.cnn = resolve(a["cnn"], base_dir);
  c.artifacts.whitening = resolve(a["whitening"], base_dir);
  c.artifacts.gmm = resolve(a["gmm"], base_dir);
  c.artifacts.kmeans = resolve(a["kmeans"], base_dir);
  return c;
}

json PipelineConfig::to_json() const {
  const auto& n = cnn.config;
  const auto& t = cnn.schedule;
  return json{
      {"train_manifest", train_manifest.string()},
      {"test_manifest", test_manifest.string()},
      {"id_pattern", id_pattern},
      {"output_dir", output_dir.string()},
      {"seed", seed},
      {"jobs", jobs},
      {"patches", {{"invert", patches.invert}, {"stride", patches.stride}, {"max_patches", patches.max_patches}}},
      {"cnn",
       {{"sizes", {n.c1_size, n.p1_size, n.c2_size, n.p2_size}},
        {"filters", {n.c1_filters, n.c2_filters}},
        {"hidden", n.hidden_nodes},
        {"lr", t.learning_rate},
        {"epochs", t.epochs},
        {"momentum", t.nesterov_momentum},
        {"momentum_epochs", t.momentum_epochs},
        {"batch_size", t.batch_size},
        {"holdout_fraction", cnn.holdout_fraction},
        {"max_train_patches", cnn.max_train_patches}}},
      {"whitening", {{"mode", whitening::to_string(whitening_mode)}, {"epsilon", whitening_epsilon}}},
      {"gmm",
       {{"components", gmm.components},
        {"max_iters", gmm.max_iters},
        {"tol", gmm.tol},
        {"variance_floor_ratio", gmm.variance_floor_ratio}}},
      {"kmeans", {{"components", kmeans.components}, {"batch_size", kmeans.batch_size}, {"iters", kmeans.iters}}},
      {"encoder",
       {{"type", encoding::to_string(encoder)},
        {"tau", encoder_params.tau},
        {"top_c", encoder_params.top_c},
        {"renormalize", encoder_params.renormalize_truncated},
        {"power", encoder_params.power}}},
      {"artifacts",
       {{"cnn", artifacts.cnn.string()},
        {"whitening", artifacts.whitening.string()},
        {"gmm", artifacts.gmm.string()},
        {"kmeans", artifacts.kmeans.string()}}},
  };
}

std::string PipelineConfig::hash() const {
  // Neither where results go nor how many workers compute them changes them.
  json j = to_json();
  j.erase("output_dir");
  j.erase("jobs");
  return io::sha256_hex(j.dump());
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("stage override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("stage override '" + assignment + "': empty key segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("stage override '" + assignment + "': '" + part + "' is not a section");
    node = &child;
    start = dot + 1;
  }
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  for (const auto& o : overrides) apply_override(j, o);
  try {
    return PipelineConfig::from_json(j, path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Patch files

namespace {
constexpr std::uint32_t kPatchVersion = 1;
}

std::string encode_patches(const std::vector<imaging::Patch>& patches, const std::string& source_doc) {
  io::BinaryWriter out;
  out.magic("SPAT");
  out.u32(kPatchVersion);
  out.string(source_doc);
  out.u32(static_cast<std::uint32_t>(patches.size()));
  std::vector<std::uint8_t> raw(imaging::kPatchSize);
  for (const auto& p : patches) {
    out.i32(p.center.row);
    out.i32(p.center.col);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = static_cast<std::uint8_t>(std::lround(std::clamp(p.pixels[i], 0.0f, 1.0f) * 255.0f));
    }
    out.bytes(raw);
  }
  return out.buffer();
}

std::vector<imaging::Patch> decode_patches(std::string bytes, const std::string& source) {
  io::BinaryReader in(std::move(bytes), source);
  in.expect_magic("SPAT");
  const auto version = in.u32();
  if (version != kPatchVersion) throw FormatError(source + ": unsupported patch file version " + std::to_string(version));
  const std::string doc = in.string();
  const auto count = in.u32();
  if (static_cast<std::size_t>(count) * (8 + imaging::kPatchSize) > in.remaining()) {
    throw FormatError(source + ": truncated patch file");
  }
  std::vector<imaging::Patch> patches(count);
  for (auto& p : patches) {
    p.center.row = in.i32();
    p.center.col = in.i32();
    const auto raw = in.bytes(imaging::kPatchSize);
    for (std::size_t i = 0; i < raw.size(); ++i) p.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    p.source_doc = doc;
  }
  in.expect_end();
  return patches;
}

// ---------------------------------------------------------------------------
// Layout

fs::path Layout::binarized(const std::string& set, const DocumentEntry& d) const {
  return root / "binarized" / set / (d.key() + ".png");
}
fs::path Layout::patches(const std::string& set, const DocumentEntry& d) const {
  return root / "patches" / set / (d.key() + ".spat");
}
fs::path Layout::features(const std::string& set, const DocumentEntry& d) const {
  return root / "features" / set / (d.key() + ".cafv");
}
fs::path Layout::encoded(const DocumentEntry& d) const { return root / "encoded" / (d.key() + ".senc"); }

// ---------------------------------------------------------------------------
// Stage runners

namespace {

struct DataSet {
  std::string name;
  DatasetManifest manifest;
};

class Runner {
 public:
  explicit Runner(const PipelineConfig& config) : config_(config), layout_{config.output_dir} {}

  void run(Stage stage) {
    stage_ = stage;
    seed_ = derive_seed(config_.seed, to_string(stage));
    inputs_.clear();
    spdlog::info("stage {}: start", to_string(stage));
    switch (stage) {
      case Stage::kBinarize: binarize(); break;
      case Stage::kPatches: patches(); break;
      case Stage::kTrainCnn: train_cnn(); break;
      case Stage::kFeatures: features(); break;
      case Stage::kWhiten: whiten(); break;
      case Stage::kTrainGmm: train_gmm(); break;
      case Stage::kEncode: encode(); break;
      case Stage::kEvaluate: evaluate(); break;
    }
    record();
    spdlog::info("stage {}: done", to_string(stage));
  }

 private:
  // Sets whose documents flow through the per-document stages.
  std::vector<DataSet> sets() {
    std::vector<DataSet> out;
    if (!config_.train_manifest.empty()) out.push_back({"train", manifest(config_.train_manifest)});
    if (!config_.test_manifest.empty()) out.push_back({"test", manifest(config_.test_manifest)});
    if (out.empty()) throw ConfigError("config: neither train_manifest nor test_manifest is set");
    return out;
  }

  DatasetManifest manifest(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("manifest not found: " + path.string());
    inputs_.push_back(path);
    return parse_manifest(path, config_.id_pattern);
  }

  DataSet train_set() {
    if (config_.train_manifest.empty()) {
      throw ConfigError("stage " + to_string(stage_) + " needs train_manifest (or an artifacts override)");
    }
    return {"train", manifest(config_.train_manifest)};
  }

  DataSet test_set() {
    if (config_.test_manifest.empty()) throw ConfigError("stage " + to_string(stage_) + " needs test_manifest");
    return {"test", manifest(config_.test_manifest)};
  }

  fs::path require(const fs::path& path, Stage producer) {
    if (!fs::exists(path)) {
      throw MissingArtifactError("stage " + to_string(stage_) + ": missing " + path.string() + "; run stage '" +
                                 to_string(producer) + "' first");
    }
    inputs_.push_back(path);
    return path;
  }

  fs::path cnn_path() { return config_.artifacts.cnn.empty() ? layout_.cnn_model() : config_.artifacts.cnn; }
  fs::path whitening_path() {
    return config_.artifacts.whitening.empty() ? layout_.whitening() : config_.artifacts.whitening;
  }
  fs::path gmm_path() { return config_.artifacts.gmm.empty() ? layout_.gmm() : config_.artifacts.gmm; }
  fs::path kmeans_path() { return config_.artifacts.kmeans.empty() ? layout_.kmeans() : config_.artifacts.kmeans; }
  bool uses_kmeans() const { return config_.encoder == encoding::EncoderKind::kVlad; }

  // Stacks the per-document features of a set in manifest order.
  Matrix stacked_features(const DataSet& set) {
    std::vector<Matrix> parts(set.manifest.documents.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      parts[i] = encoding::load_descriptor_set(require(layout_.features(set.name, set.manifest.documents[i]),
                                                       Stage::kFeatures));
    }
    Eigen::Index rows = 0;
    Eigen::Index cols = -1;
    for (const auto& p : parts) {
      if (p.rows() == 0) continue;
      if (cols >= 0 && p.cols() != cols) throw FormatError("feature files have differing dimensions");
      cols = p.cols();
      rows += p.rows();
    }
    if (rows == 0) throw Error("stage " + to_string(stage_) + ": the " + set.name + " set has no features");
    Matrix x(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      if (p.rows() == 0) continue;
      x.middleRows(at, p.rows()) = p;
      at += p.rows();
    }
    return x;
  }

  void binarize() {
    for (const auto& set : sets()) {
      fs::create_directories(layout_.root / "binarized" / set.name);
      const auto& docs = set.manifest.documents;
      for (const auto& d : docs) inputs_.push_back(d.image);
      parallel_for(docs.size(), config_.jobs, [&](std::size_t i) {
        const auto img = imaging::load_image(docs[i].image);
        const int t = imaging::otsu_threshold(img);
        imaging::save_png(imaging::binarize(img, t, config_.patches.invert), layout_.binarized(set.name, docs[i]));
      });
    }
  }

  void patches() {
    for (const auto& set : sets()) {
      fs::create_directories(layout_.root / "patches" / set.name);
      const auto& docs = set.manifest.documents;
      for (const auto& d : docs) {
        inputs_.push_back(d.image);
        require(layout_.binarized(set.name, d), Stage::kBinarize);
      }
      parallel_for(docs.size(), config_.jobs, [&](std::size_t i) {
        const auto& d = docs[i];
        const auto img = imaging::load_image(d.image);
        const auto bin = imaging::binary_from_rendering(imaging::load_image(layout_.binarized(set.name, d)));
        if (bin.width() != img.width() || bin.height() != img.height()) {
          throw FormatError(layout_.binarized(set.name, d).string() + ": size differs from " + d.image.string() +
                            "; rerun stage 'binarize'");
        }
        const auto contour = imaging::extract_contour(bin);
        imaging::SamplingParams params;
        params.stride = config_.patches.stride;
        params.max_patches = config_.patches.max_patches;
        params.seed = derive_seed(seed_, set.name + "/" + d.key());
        const auto sampled = imaging::sample_patches(img, contour, params, d.key());
        if (sampled.empty()) spdlog::warn("{}: no patches sampled", d.key());
        io::write_file_atomic(layout_.patches(set.name, d), encode_patches(sampled, d.key()));
      });
    }
  }

  void train_cnn() {
    if (!config_.artifacts.cnn.empty()) {
      require(config_.artifacts.cnn, Stage::kTrainCnn);
      spdlog::info("train-cnn: using existing model {}", config_.artifacts.cnn.string());
      return;
    }
    const DataSet set = train_set();
    std::map<std::string, int> labels;
    for (const auto& d : set.manifest.documents) labels.emplace(d.writer_id, 0);
    if (labels.size() < 2) throw ConfigError("train-cnn: the training manifest needs at least two writers");
    int next = 0;
    for (auto& [writer, label] : labels) label = next++;

    std::vector<cnn::LabeledPatch> data;
    for (const auto& d : set.manifest.documents) {
      const auto path = require(layout_.patches(set.name, d), Stage::kPatches);
      for (auto& p : decode_patches(io::read_file(path), path.string())) {
        data.push_back({std::move(p), labels.at(d.writer_id)});
      }
    }
    if (data.empty()) throw Error("train-cnn: no training patches");

    std::mt19937_64 rng(derive_seed(seed_, "split"));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto holdout = static_cast<std::size_t>(config_.cnn.holdout_fraction * static_cast<double>(data.size()));
    std::size_t train_count = data.size() - holdout;
    if (config_.cnn.max_train_patches > 0) train_count = std::min(train_count, config_.cnn.max_train_patches);
    std::vector<cnn::LabeledPatch> train_data;
    std::vector<cnn::LabeledPatch> heldout_data;
    train_data.reserve(train_count);
    heldout_data.reserve(holdout);
    for (std::size_t i = 0; i < holdout; ++i) heldout_data.push_back(std::move(data[order[i]]));
    for (std::size_t i = holdout; i < holdout + train_count; ++i) train_data.push_back(std::move(data[order[i]]));
    data.clear();
    data.shrink_to_fit();

    cnn::CnnConfig net = config_.cnn.config;
    net.num_classes = static_cast<int>(labels.size());
    cnn::TrainSchedule schedule = config_.cnn.schedule;
    schedule.seed = derive_seed(seed_, "init");
    spdlog::info("train-cnn: {} training / {} held-out patches, {} writers", train_data.size(), heldout_data.size(),
                 labels.size());

    cnn::TrainOptions options;
    options.jobs = config_.jobs;
    options.on_epoch = [](const cnn::EpochLog& e) {
      spdlog::info("train-cnn: epoch {} loss {:.4f} train acc {:.4f}{}", e.epoch, e.mean_loss, e.train_accuracy,
                   e.heldout_accuracy ? fmt::format(" held-out acc {:.4f}", *e.heldout_accuracy) : "");
    };
    const auto result = cnn::train(net, schedule, train_data, heldout_data, options);

    std::ostringstream log;
    log << "epoch,momentum,mean_loss,train_accuracy,heldout_accuracy\n";
    for (const auto& e : result.log) {
      log << e.epoch << "," << (e.momentum ? 1 : 0) << "," << fmt::format("{:.6f}", e.mean_loss) << ","
          << fmt::format("{:.6f}", e.train_accuracy) << ","
          << (e.heldout_accuracy ? fmt::format("{:.6f}", *e.heldout_accuracy) : "") << "\n";
    }
    cnn::save_model(result.model, layout_.cnn_model());
    io::write_file_atomic(layout_.cnn_log(), log.str());
  }

  void features() {
    const auto model = cnn::load_model(require(cnn_path(), Stage::kTrainCnn));
    for (const auto& set : sets()) {
      fs::create_directories(layout_.root / "features" / set.name);
      const auto& docs = set.manifest.documents;
      for (const auto& d : docs) require(layout_.patches(set.name, d), Stage::kPatches);
      parallel_for(docs.size(), config_.jobs, [&](std::size_t i) {
        const auto path = layout_.patches(set.name, docs[i]);
        const auto patches = decode_patches(io::read_file(path), path.string());
        Matrix x = patches.empty() ? Matrix(0, model.config.hidden_nodes) : cnn::extract_features(model, patches, 1);
        encoding::save_descriptor_set(x, layout_.features(set.name, docs[i]));
      });
    }
  }

  void whiten() {
    if (!config_.artifacts.whitening.empty()) {
      require(config_.artifacts.whitening, Stage::kWhiten);
      spdlog::info("whiten: using existing transform {}", config_.artifacts.whitening.string());
      return;
    }
    const Matrix x = stacked_features(train_set());
    spdlog::info("whiten: fitting {} on {} x {}", whitening::to_string(config_.whitening_mode), x.rows(), x.cols());
    whitening::save_transform(whitening::fit_whitening(x, config_.whitening_mode, config_.whitening_epsilon),
                              layout_.whitening());
  }

  void train_gmm() {
    const fs::path override_path = uses_kmeans() ? config_.artifacts.kmeans : config_.artifacts.gmm;
    if (!override_path.empty()) {
      require(override_path, Stage::kTrainGmm);
      spdlog::info("train-gmm: using existing dictionary {}", override_path.string());
      return;
    }
    const auto tf = whitening::load_transform(require(whitening_path(), Stage::kWhiten));
    const Matrix x = whitening::apply_whitening(tf, stacked_features(train_set()));
    if (uses_kmeans()) {
      spdlog::info("train-gmm: mini-batch k-means, K={} on {} descriptors", config_.kmeans.components, x.rows());
      const auto km = gmm::fit_minibatch_kmeans(x, config_.kmeans.components, config_.kmeans.batch_size,
                                                config_.kmeans.iters, derive_seed(seed_, "kmeans"));
      gmm::save_kmeans(km, layout_.kmeans());
      return;
    }
    gmm::GmmOptions options;
    options.components = config_.gmm.components;
    options.max_iters = config_.gmm.max_iters;
    options.tol = config_.gmm.tol;
    options.variance_floor_ratio = config_.gmm.variance_floor_ratio;
    options.seed = derive_seed(seed_, "gmm");
    options.jobs = config_.jobs;
    spdlog::info("train-gmm: EM, K={} on {} descriptors", options.components, x.rows());
    const auto fit = gmm::fit_gmm(x, options);
    spdlog::info("train-gmm: {} iterations, converged={}, final log-likelihood {:.6f}", fit.log_likelihood.size(),
                 fit.converged, fit.log_likelihood.empty() ? 0.0 : fit.log_likelihood.back());
    gmm::save_gmm(fit.model, layout_.gmm());
  }

  void encode() {
    const DataSet set = test_set();
    const auto tf = whitening::load_transform(require(whitening_path(), Stage::kWhiten));
    std::optional<gmm::GmmModel> dictionary;
    std::optional<gmm::KmeansModel> centers;
    if (uses_kmeans()) {
      centers = gmm::load_kmeans(require(kmeans_path(), Stage::kTrainGmm));
    } else {
      dictionary = gmm::load_gmm(require(gmm_path(), Stage::kTrainGmm));
    }
    fs::create_directories(layout_.root / "encoded");
    const auto& docs = set.manifest.documents;
    for (const auto& d : docs) require(layout_.features(set.name, d), Stage::kFeatures);
    parallel_for(docs.size(), config_.jobs, [&](std::size_t i) {
      const auto& d = docs[i];
      const Matrix raw = encoding::load_descriptor_set(layout_.features(set.name, d));
      if (raw.rows() == 0) throw encoding::EmptyDocumentError("encode: " + d.key() + " has no descriptors");
      const Matrix x = whitening::apply_whitening(tf, raw);
      encoding::GlobalDescriptor g;
      switch (config_.encoder) {
        case encoding::EncoderKind::kSupervectorKl:
        case encoding::EncoderKind::kSupervectorSsr:
          g = encoding::encode_supervector(*dictionary, x, config_.encoder_params);
          break;
        case encoding::EncoderKind::kVlad: g = encoding::encode_vlad(*centers, x, config_.encoder_params.power); break;
        case encoding::EncoderKind::kFisher:
          g = encoding::encode_fisher(*dictionary, x, config_.encoder_params.power);
          break;
      }
      g.writer_id = d.writer_id;
      g.doc_id = d.doc_id;
      encoding::save_global_descriptor(g, layout_.encoded(d));
    });
  }

  void evaluate() {
    const DataSet set = test_set();
    std::vector<encoding::GlobalDescriptor> descriptors;
    std::map<std::string, int> per_writer;
    for (const auto& d : set.manifest.documents) {
      descriptors.push_back(encoding::load_global_descriptor(require(layout_.encoded(d), Stage::kEncode)));
      ++per_writer[d.writer_id];
    }
    for (const auto& [writer, count] : per_writer) {
      if (count < 2) spdlog::warn("evaluate: writer {} has a single document and no relevant matches", writer);
    }
    const auto rankings = retrieval::rank_all(descriptors, config_.jobs);
    const auto report = retrieval::evaluate(rankings);
    io::write_file_atomic(layout_.report(), retrieval::format_report(report));
    io::write_file_atomic(layout_.per_query(), retrieval::format_per_query_csv(report));
    io::write_file_atomic(layout_.rankings(), retrieval::format_rankings(rankings));
    spdlog::info("evaluate: mAP {:.4f}, TOP-1 {:.4f} over {} queries", report.mean_average_precision,
                 report.hard_top_k.count(1) ? report.hard_top_k.at(1) : 0.0, report.queries);
  }

  std::string display(const fs::path& p) const {
    const auto rel = p.lexically_relative(layout_.root);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
  }

  // Appends this stage's entry to run_manifest.json. Keys are sorted and no
  // wall-clock data is stored, so identical runs write identical files.
  void record() {
    json manifest = json::object();
    if (fs::exists(layout_.run_manifest())) {
      manifest = json::parse(io::read_file(layout_.run_manifest()), nullptr, false);
      if (!manifest.is_object() || manifest.value("config_hash", "") != config_.hash()) manifest = json::object();
    }
    manifest["config_hash"] = config_.hash();
    manifest["seed"] = config_.seed;
    manifest["config"] = config_.to_json();
    manifest["config"].erase("output_dir");
    manifest["config"].erase("jobs");
    json inputs = json::object();
    std::sort(inputs_.begin(), inputs_.end());
    inputs_.erase(std::unique(inputs_.begin(), inputs_.end()), inputs_.end());
    for (const auto& p : inputs_) inputs[display(p)] = io::sha256_file(p);
    manifest["stages"][to_string(stage_)] = {{"seed", seed_}, {"inputs", inputs}};
    io::write_file_atomic(layout_.run_manifest(), manifest.dump(2) + "\n");
  }

  const PipelineConfig& config_;
  Layout layout_;
  Stage stage_ = Stage::kBinarize;
  std::uint64_t seed_ = 0;
  std::vector<fs::path> inputs_;
};

}  // namespace

void run_stage(const PipelineConfig& config, Stage stage) {
  fs::create_directories(config.output_dir);
  Runner(config).run(stage);
}

void run_pipeline(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  Runner runner(config);
  for (Stage s : all_stages()) runner.run(s);
}

}  // namespace writerid::pipeline
