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

// Six-layer patch CNN: conv -> ReLU -> max-pool -> conv -> ReLU -> max-pool
// -> dense -> ReLU (descriptor) -> dense -> softmax (training head only).
//
// Convolutions are valid with stride 1, pooling windows are non-overlapping
// and incomplete border windows are dropped. Tensors are flattened channel
// first: index = channel * side * side + row * side + col.

#ifndef WRITERID_CNN_HPP_
#define WRITERID_CNN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "writerid/common.hpp"
#include "writerid/imaging.hpp"

namespace writerid::cnn {

// Spatial side lengths through the network for a 32x32 input.
struct ShapeChain {
  int conv1 = 0;
  int pool1 = 0;
  int conv2 = 0;
  int pool2 = 0;
  int flatten = 0;
};

struct CnnConfig {
  int c1_size = 7;
  int p1_size = 2;
  int c2_size = 5;
  int p2_size = 3;
  int c1_filters = 16;
  int c2_filters = 256;
  int hidden_nodes = 64;
  int num_classes = 100;

  // 5x5 / 2x2 / 5x5 / 2x2 filter and pooling layout.
  static CnnConfig config_a();
  // 7x7 / 2x2 / 5x5 / 3x3 filter and pooling layout.
  static CnnConfig config_b();

  ShapeChain shapes() const;
  int flatten_dim() const { return shapes().flatten; }
  // Throws ConfigError unless every size is >= 1 and the chain stays non-empty.
  void validate() const;

  friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

// Parameter tensors; gradients use the same layout.
struct CnnWeights {
  Matrix conv1_w;  // c1_filters x c1_size^2
  Vector conv1_b;
  Matrix conv2_w;  // c2_filters x (c1_filters * c2_size^2)
  Vector conv2_b;
  Matrix hidden_w;  // hidden_nodes x flatten
  Vector hidden_b;
  Matrix out_w;  // num_classes x hidden_nodes
  Vector out_b;

  static CnnWeights zeros(const CnnConfig& config);

  // this += scale * other
  void add_scaled(const CnnWeights& other, double scale);
  void scale(double factor);
  bool all_finite() const;
  std::size_t parameter_count() const;

  // Visits (name, flat row-major storage) for every tensor.
  void for_each(const std::function<void(std::string_view, std::span<double>)>& fn);
  void for_each(const std::function<void(std::string_view, std::span<const double>)>& fn) const;
};

struct CnnModel {
  CnnConfig config;
  CnnWeights weights;
  // The softmax head is kept in saved models but is not part of the descriptor.
  bool head_discardable = true;

  // Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
  static CnnModel initialize(const CnnConfig& config, std::uint64_t seed);
  static CnnModel zeros(const CnnConfig& config);
};

// Hidden-layer activations (hidden_nodes values), or class probabilities when
// `with_head` is set.
Vector forward(const CnnModel& model, const imaging::Patch& patch, bool with_head);

struct LabeledPatch {
  imaging::Patch patch;
  int label = 0;
};

struct LossAndGradients {
  double loss = 0.0;  // mean cross-entropy
  CnnWeights gradients;
  std::size_t correct = 0;  // argmax predictions matching the label
};

// Exact gradients of the mean cross-entropy over the batch. Samples are
// processed in fixed-size chunks reduced in order, so `jobs` does not change
// the result.
LossAndGradients loss_and_gradients(const CnnModel& model, std::span<const LabeledPatch> batch,
                                    int jobs = 1);
LossAndGradients loss_and_gradients(const CnnModel& model, std::span<const LabeledPatch* const> batch,
                                    int jobs = 1);

struct TrainSchedule {
  double learning_rate = 0.01;
  int epochs = 20;
  double nesterov_momentum = 0.9;
  int momentum_epochs = 5;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // running accuracy over the epoch's batches
  std::optional<double> heldout_accuracy;
  bool momentum = false;
};

struct TrainResult {
  CnnModel model;
  std::vector<EpochLog> log;
};

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

struct TrainOptions {
  int jobs = 1;
  std::function<void(const EpochLog&)> on_epoch;
};

// Minibatch SGD on shuffled data. Epochs 1..momentum_epochs use Nesterov
// momentum in the form
//   v <- m v - lr grad L(w + m v);  w <- w + v
// and later epochs use plain w <- w - lr grad L(w). Initialization and batch
// order derive only from schedule.seed.
TrainResult train(const CnnConfig& config, const TrainSchedule& schedule,
                  std::span<const LabeledPatch> data, std::span<const LabeledPatch> heldout = {},
                  const TrainOptions& options = {});

// Plain SGD update w <- w - lr * g.
void sgd_step(CnnWeights& weights, const CnnWeights& gradients, double learning_rate);

// Fraction of samples whose most probable class equals the label.
double accuracy(const CnnModel& model, std::span<const LabeledPatch> data, int jobs = 1);

// T x hidden_nodes matrix of hidden activations, one row per patch.
Matrix extract_features(const CnnModel& model, std::span<const imaging::Patch> patches, int jobs = 1);

// "SCNN" model file.
std::string encode_model(const CnnModel& model);
CnnModel decode_model(std::string bytes, const std::string& source = "model");
void save_model(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_model(const std::filesystem::path& path);

}  // namespace writerid::cnn

#endif  // WRITERID_CNN_HPP_
