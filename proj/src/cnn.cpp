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

#include "writerid/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "writerid/binary_io.hpp"
#include "writerid/parallel.hpp"

namespace writerid::cnn {

using imaging::kPatchSide;

CnnConfig CnnConfig::config_a() {
  CnnConfig c;
  c.c1_size = 5;
  c.p1_size = 2;
  c.c2_size = 5;
  c.p2_size = 2;
  return c;
}

CnnConfig CnnConfig::config_b() { return CnnConfig{}; }

ShapeChain CnnConfig::shapes() const {
  ShapeChain s;
  s.conv1 = kPatchSide - c1_size + 1;
  s.pool1 = p1_size > 0 ? s.conv1 / p1_size : 0;
  s.conv2 = s.pool1 - c2_size + 1;
  s.pool2 = p2_size > 0 ? s.conv2 / p2_size : 0;
  s.flatten = s.pool2 > 0 ? c2_filters * s.pool2 * s.pool2 : 0;
  return s;
}

void CnnConfig::validate() const {
  for (int v : {c1_size, p1_size, c2_size, p2_size, c1_filters, c2_filters, hidden_nodes, num_classes}) {
    if (v < 1) throw ConfigError("cnn config: all sizes and counts must be >= 1");
  }
  const ShapeChain s = shapes();
  if (s.conv1 < 1 || s.pool1 < 1 || s.conv2 < 1 || s.pool2 < 1 || s.flatten < 1) {
    throw ConfigError("cnn config: filter/pool sizes leave no output for a 32x32 input");
  }
}

CnnWeights CnnWeights::zeros(const CnnConfig& c) {
  c.validate();
  CnnWeights w;
  w.conv1_w = Matrix::Zero(c.c1_filters, c.c1_size * c.c1_size);
  w.conv1_b = Vector::Zero(c.c1_filters);
  w.conv2_w = Matrix::Zero(c.c2_filters, c.c1_filters * c.c2_size * c.c2_size);
  w.conv2_b = Vector::Zero(c.c2_filters);
  w.hidden_w = Matrix::Zero(c.hidden_nodes, c.flatten_dim());
  w.hidden_b = Vector::Zero(c.hidden_nodes);
  w.out_w = Matrix::Zero(c.num_classes, c.hidden_nodes);
  w.out_b = Vector::Zero(c.num_classes);
  return w;
}

void CnnWeights::add_scaled(const CnnWeights& o, double s) {
  conv1_w += o.conv1_w * s;
  conv1_b += o.conv1_b * s;
  conv2_w += o.conv2_w * s;
  conv2_b += o.conv2_b * s;
  hidden_w += o.hidden_w * s;
  hidden_b += o.hidden_b * s;
  out_w += o.out_w * s;
  out_b += o.out_b * s;
}

void CnnWeights::scale(double f) {
  conv1_w *= f;
  conv1_b *= f;
  conv2_w *= f;
  conv2_b *= f;
  hidden_w *= f;
  hidden_b *= f;
  out_w *= f;
  out_b *= f;
}

void CnnWeights::for_each(const std::function<void(std::string_view, std::span<double>)>& fn) {
  auto visit = [&](std::string_view name, auto& t) { fn(name, std::span<double>(t.data(), t.size())); };
  visit("conv1_w", conv1_w);
  visit("conv1_b", conv1_b);
  visit("conv2_w", conv2_w);
  visit("conv2_b", conv2_b);
  visit("hidden_w", hidden_w);
  visit("hidden_b", hidden_b);
  visit("out_w", out_w);
  visit("out_b", out_b);
}

void CnnWeights::for_each(const std::function<void(std::string_view, std::span<const double>)>& fn) const {
  const_cast<CnnWeights*>(this)->for_each(
      [&](std::string_view name, std::span<double> s) { fn(name, std::span<const double>(s)); });
}

bool CnnWeights::all_finite() const {
  bool finite = true;
  for_each([&](std::string_view, std::span<const double> s) {
    finite = finite && std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
  });
  return finite;
}

std::size_t CnnWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, std::span<const double> s) { n += s.size(); });
  return n;
}

CnnModel CnnModel::zeros(const CnnConfig& config) { return CnnModel{config, CnnWeights::zeros(config), true}; }

CnnModel CnnModel::initialize(const CnnConfig& c, std::uint64_t seed) {
  CnnModel m = zeros(c);
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& w, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  };
  const double k1 = c.c1_size * c.c1_size;
  const double k2 = c.c2_size * c.c2_size;
  fill(m.weights.conv1_w, k1, c.c1_filters * k1);
  fill(m.weights.conv2_w, c.c1_filters * k2, c.c2_filters * k2);
  fill(m.weights.hidden_w, c.flatten_dim(), c.hidden_nodes);
  fill(m.weights.out_w, c.hidden_nodes, c.num_classes);
  return m;
}

namespace {

constexpr int kChunk = 16;

void check_model(const CnnModel& m) {
  const CnnWeights ref = CnnWeights::zeros(m.config);
  bool ok = true;
  auto same = [&](const auto& a, const auto& b) { ok = ok && a.rows() == b.rows() && a.cols() == b.cols(); };
  same(m.weights.conv1_w, ref.conv1_w);
  same(m.weights.conv1_b, ref.conv1_b);
  same(m.weights.conv2_w, ref.conv2_w);
  same(m.weights.conv2_b, ref.conv2_b);
  same(m.weights.hidden_w, ref.hidden_w);
  same(m.weights.hidden_b, ref.hidden_b);
  same(m.weights.out_w, ref.out_w);
  same(m.weights.out_b, ref.out_b);
  if (!ok) throw ConfigError("cnn: weight shapes do not match the model configuration");
}

// Activations of one chunk of samples. Spatial maps are stored as
// (channels x samples*side*side) with sample-major columns.
struct Activations {
  int n = 0;
  Matrix col1;
  Matrix act1;
  Matrix pool1;
  std::vector<int> arg1;
  Matrix col2;
  Matrix act2;
  Matrix pool2;
  std::vector<int> arg2;
  Matrix flat;
  Matrix hidden;
  Matrix logits;
};

void max_pool(const Matrix& act, int side, int q, int n, Matrix& out, std::vector<int>& arg) {
  const int p = side / q;
  const int area_in = side * side;
  const int area_out = p * p;
  out.resize(act.rows(), static_cast<Eigen::Index>(n) * area_out);
  arg.resize(static_cast<std::size_t>(out.size()));
  for (Eigen::Index f = 0; f < act.rows(); ++f) {
    const double* a = act.row(f).data();
    double* o = out.row(f).data();
    int* g = arg.data() + f * out.cols();
    for (int s = 0; s < n; ++s) {
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          int best = s * area_in + py * q * side + px * q;
          for (int dy = 0; dy < q; ++dy) {
            for (int dx = 0; dx < q; ++dx) {
              const int idx = s * area_in + (py * q + dy) * side + px * q + dx;
              if (a[idx] > a[best]) best = idx;
            }
          }
          const int j = s * area_out + py * p + px;
          o[j] = a[best];
          g[j] = best;
        }
      }
    }
  }
}

void forward_chunk(const CnnModel& model, std::span<const float* const> inputs, bool with_head,
                   Activations& a) {
  const CnnConfig& c = model.config;
  const CnnWeights& w = model.weights;
  const ShapeChain sh = c.shapes();
  const int n = static_cast<int>(inputs.size());
  a.n = n;

  const int k1 = c.c1_size;
  const int s1 = sh.conv1;
  const int area1 = s1 * s1;
  a.col1.resize(k1 * k1, static_cast<Eigen::Index>(n) * area1);
  for (int ky = 0; ky < k1; ++ky) {
    for (int kx = 0; kx < k1; ++kx) {
      double* dst = a.col1.row(ky * k1 + kx).data();
      for (int s = 0; s < n; ++s) {
        const float* in = inputs[s];
        for (int y = 0; y < s1; ++y) {
          for (int x = 0; x < s1; ++x) dst[s * area1 + y * s1 + x] = in[(y + ky) * kPatchSide + x + kx];
        }
      }
    }
  }
  a.act1.noalias() = w.conv1_w * a.col1;
  a.act1.colwise() += w.conv1_b;
  a.act1 = a.act1.cwiseMax(0.0);
  max_pool(a.act1, s1, c.p1_size, n, a.pool1, a.arg1);

  const int p1 = sh.pool1;
  const int k2 = c.c2_size;
  const int s2 = sh.conv2;
  const int area2 = s2 * s2;
  a.col2.resize(static_cast<Eigen::Index>(c.c1_filters) * k2 * k2, static_cast<Eigen::Index>(n) * area2);
  for (int ch = 0; ch < c.c1_filters; ++ch) {
    const double* src = a.pool1.row(ch).data();
    for (int ky = 0; ky < k2; ++ky) {
      for (int kx = 0; kx < k2; ++kx) {
        double* dst = a.col2.row((ch * k2 + ky) * k2 + kx).data();
        for (int s = 0; s < n; ++s) {
          for (int y = 0; y < s2; ++y) {
            for (int x = 0; x < s2; ++x) {
              dst[s * area2 + y * s2 + x] = src[s * p1 * p1 + (y + ky) * p1 + x + kx];
            }
          }
        }
      }
    }
  }
  a.act2.noalias() = w.conv2_w * a.col2;
  a.act2.colwise() += w.conv2_b;
  a.act2 = a.act2.cwiseMax(0.0);
  max_pool(a.act2, s2, c.p2_size, n, a.pool2, a.arg2);

  const int area_p2 = sh.pool2 * sh.pool2;
  a.flat.resize(sh.flatten, n);
  for (int f = 0; f < c.c2_filters; ++f) {
    const double* src = a.pool2.row(f).data();
    for (int s = 0; s < n; ++s) {
      for (int j = 0; j < area_p2; ++j) a.flat(f * area_p2 + j, s) = src[s * area_p2 + j];
    }
  }
  a.hidden.noalias() = w.hidden_w * a.flat;
  a.hidden.colwise() += w.hidden_b;
  a.hidden = a.hidden.cwiseMax(0.0);

  if (with_head) {
    a.logits.noalias() = w.out_w * a.hidden;
    a.logits.colwise() += w.out_b;
  }
}

// Column-wise softmax of the logits.
Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.cols(); ++s) {
    const double m = logits.col(s).maxCoeff();
    p.col(s) = (logits.col(s).array() - m).exp().matrix();
    p.col(s) /= p.col(s).sum();
  }
  return p;
}

int argmax_first(const Eigen::Ref<const Vector>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = static_cast<int>(i);
  }
  return best;
}

struct ChunkResult {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  CnnWeights grad;
};

ChunkResult backward_chunk(const CnnModel& model, std::span<const LabeledPatch* const> samples) {
  const CnnConfig& c = model.config;
  const CnnWeights& w = model.weights;
  const ShapeChain sh = c.shapes();
  const int n = static_cast<int>(samples.size());

  std::vector<const float*> inputs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i]->label;
    if (label < 0 || label >= c.num_classes) {
      throw ConfigError("cnn: label " + std::to_string(label) + " outside [0, num_classes)");
    }
    inputs[i] = samples[i]->patch.pixels.data();
  }
  Activations a;
  forward_chunk(model, inputs, true, a);

  ChunkResult r;
  Matrix dlogits = softmax(a.logits);
  for (int s = 0; s < n; ++s) {
    const int label = samples[s]->label;
    const double m = a.logits.col(s).maxCoeff();
    const double lse = m + std::log((a.logits.col(s).array() - m).exp().sum());
    r.loss_sum += lse - a.logits(label, s);
    if (argmax_first(a.logits.col(s)) == label) ++r.correct;
    dlogits(label, s) -= 1.0;
  }

  CnnWeights& g = r.grad;
  g.out_w.noalias() = dlogits * a.hidden.transpose();
  g.out_b = dlogits.rowwise().sum();

  Matrix dhidden = w.out_w.transpose() * dlogits;
  dhidden = dhidden.cwiseProduct((a.hidden.array() > 0.0).cast<double>().matrix());
  g.hidden_w.noalias() = dhidden * a.flat.transpose();
  g.hidden_b = dhidden.rowwise().sum();

  const Matrix dflat = w.hidden_w.transpose() * dhidden;
  const int area_p2 = sh.pool2 * sh.pool2;
  Matrix dact2 = Matrix::Zero(a.act2.rows(), a.act2.cols());
  for (int f = 0; f < c.c2_filters; ++f) {
    double* d = dact2.row(f).data();
    const int* arg = a.arg2.data() + static_cast<std::size_t>(f) * a.pool2.cols();
    for (int s = 0; s < n; ++s) {
      for (int j = 0; j < area_p2; ++j) d[arg[s * area_p2 + j]] += dflat(f * area_p2 + j, s);
    }
  }
  dact2 = dact2.cwiseProduct((a.act2.array() > 0.0).cast<double>().matrix());
  g.conv2_w.noalias() = dact2 * a.col2.transpose();
  g.conv2_b = dact2.rowwise().sum();

  const Matrix dcol2 = w.conv2_w.transpose() * dact2;
  const int p1 = sh.pool1;
  const int k2 = c.c2_size;
  const int s2 = sh.conv2;
  const int area2 = s2 * s2;
  Matrix dpool1 = Matrix::Zero(a.pool1.rows(), a.pool1.cols());
  for (int ch = 0; ch < c.c1_filters; ++ch) {
    double* dst = dpool1.row(ch).data();
    for (int ky = 0; ky < k2; ++ky) {
      for (int kx = 0; kx < k2; ++kx) {
        const double* src = dcol2.row((ch * k2 + ky) * k2 + kx).data();
        for (int s = 0; s < n; ++s) {
          for (int y = 0; y < s2; ++y) {
            for (int x = 0; x < s2; ++x) {
              dst[s * p1 * p1 + (y + ky) * p1 + x + kx] += src[s * area2 + y * s2 + x];
            }
          }
        }
      }
    }
  }

  Matrix dact1 = Matrix::Zero(a.act1.rows(), a.act1.cols());
  for (int f = 0; f < c.c1_filters; ++f) {
    double* d = dact1.row(f).data();
    const double* src = dpool1.row(f).data();
    const int* arg = a.arg1.data() + static_cast<std::size_t>(f) * a.pool1.cols();
    for (Eigen::Index j = 0; j < a.pool1.cols(); ++j) d[arg[j]] += src[j];
  }
  dact1 = dact1.cwiseProduct((a.act1.array() > 0.0).cast<double>().matrix());
  g.conv1_w.noalias() = dact1 * a.col1.transpose();
  g.conv1_b = dact1.rowwise().sum();
  return r;
}

}  // namespace

Vector forward(const CnnModel& model, const imaging::Patch& patch, bool with_head) {
  check_model(model);
  const float* input = patch.pixels.data();
  Activations a;
  forward_chunk(model, std::span<const float* const>(&input, 1), with_head, a);
  if (!with_head) return a.hidden.col(0);
  return softmax(a.logits).col(0);
}

LossAndGradients loss_and_gradients(const CnnModel& model, std::span<const LabeledPatch* const> batch,
                                    int jobs) {
  check_model(model);
  if (batch.empty()) throw ConfigError("loss_and_gradients: empty batch");
  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<ChunkResult> results(chunks);
  parallel_for(chunks, jobs, [&](std::size_t i) {
    const std::size_t begin = i * kChunk;
    const std::size_t count = std::min<std::size_t>(kChunk, batch.size() - begin);
    results[i] = backward_chunk(model, batch.subspan(begin, count));
  });

  LossAndGradients out;
  out.gradients = std::move(results[0].grad);
  out.loss = results[0].loss_sum;
  out.correct = results[0].correct;
  for (std::size_t i = 1; i < chunks; ++i) {
    out.gradients.add_scaled(results[i].grad, 1.0);
    out.loss += results[i].loss_sum;
    out.correct += results[i].correct;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  out.gradients.scale(inv);
  return out;
}

LossAndGradients loss_and_gradients(const CnnModel& model, std::span<const LabeledPatch> batch, int jobs) {
  std::vector<const LabeledPatch*> ptrs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) ptrs[i] = &batch[i];
  return loss_and_gradients(model, std::span<const LabeledPatch* const>(ptrs), jobs);
}

void TrainSchedule::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (!(nesterov_momentum >= 0.0 && nesterov_momentum < 1.0)) {
    throw ConfigError("train: momentum must lie in [0, 1)");
  }
  if (momentum_epochs < 0 || momentum_epochs > epochs) {
    throw ConfigError("train: momentum_epochs must lie in [0, epochs]");
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
}

void sgd_step(CnnWeights& weights, const CnnWeights& gradients, double learning_rate) {
  weights.add_scaled(gradients, -learning_rate);
}

double accuracy(const CnnModel& model, std::span<const LabeledPatch> data, int jobs) {
  check_model(model);
  if (data.empty()) return 0.0;
  constexpr std::size_t kBlock = 64;
  const std::size_t blocks = (data.size() + kBlock - 1) / kBlock;
  std::vector<std::size_t> hits(blocks, 0);
  parallel_for(blocks, jobs, [&](std::size_t b) {
    const std::size_t begin = b * kBlock;
    const std::size_t end = std::min(data.size(), begin + kBlock);
    std::vector<const float*> inputs;
    for (std::size_t i = begin; i < end; ++i) inputs.push_back(data[i].patch.pixels.data());
    Activations a;
    forward_chunk(model, inputs, true, a);
    for (std::size_t i = begin; i < end; ++i) {
      if (argmax_first(a.logits.col(static_cast<Eigen::Index>(i - begin))) == data[i].label) ++hits[b];
    }
  });
  return static_cast<double>(std::accumulate(hits.begin(), hits.end(), std::size_t{0})) /
         static_cast<double>(data.size());
}

TrainResult train(const CnnConfig& config, const TrainSchedule& schedule, std::span<const LabeledPatch> data,
                  std::span<const LabeledPatch> heldout, const TrainOptions& options) {
  config.validate();
  schedule.validate();
  if (data.empty()) throw ConfigError("train: no training samples");

  TrainResult result{CnnModel::initialize(config, schedule.seed), {}};
  CnnModel& model = result.model;
  CnnWeights velocity = CnnWeights::zeros(config);
  std::mt19937_64 order_rng(derive_seed(schedule.seed, "batch-order"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const LabeledPatch*> batch;
  batch.reserve(static_cast<std::size_t>(schedule.batch_size));

  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    const bool momentum = epoch <= schedule.momentum_epochs;
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += schedule.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + schedule.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&data[order[i]]);

      LossAndGradients lg;
      if (momentum) {
        CnnModel lookahead = model;
        lookahead.weights.add_scaled(velocity, schedule.nesterov_momentum);
        lg = loss_and_gradients(lookahead, batch, options.jobs);
        velocity.scale(schedule.nesterov_momentum);
        velocity.add_scaled(lg.gradients, -schedule.learning_rate);
        model.weights.add_scaled(velocity, 1.0);
      } else {
        lg = loss_and_gradients(model, batch, options.jobs);
        sgd_step(model.weights, lg.gradients, schedule.learning_rate);
      }
      if (!std::isfinite(lg.loss)) {
        throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index) + "; lower the learning rate");
      }
      loss_sum += lg.loss * static_cast<double>(batch.size());
      correct += lg.correct;
    }
    if (!momentum) velocity = CnnWeights::zeros(config);

    EpochLog entry;
    entry.epoch = epoch;
    entry.momentum = momentum;
    entry.mean_loss = loss_sum / static_cast<double>(data.size());
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    if (!heldout.empty()) entry.heldout_accuracy = accuracy(model, heldout, options.jobs);
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  return result;
}

Matrix extract_features(const CnnModel& model, std::span<const imaging::Patch> patches, int jobs) {
  check_model(model);
  Matrix out(static_cast<Eigen::Index>(patches.size()), model.config.hidden_nodes);
  constexpr std::size_t kBlock = 64;
  const std::size_t blocks = (patches.size() + kBlock - 1) / kBlock;
  parallel_for(blocks, jobs, [&](std::size_t b) {
    const std::size_t begin = b * kBlock;
    const std::size_t end = std::min(patches.size(), begin + kBlock);
    std::vector<const float*> inputs;
    for (std::size_t i = begin; i < end; ++i) inputs.push_back(patches[i].pixels.data());
    Activations a;
    forward_chunk(model, inputs, false, a);
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
        a.hidden.transpose();
  });
  return out;
}

namespace {
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kTensorCount = 8;
}  // namespace

std::string encode_model(const CnnModel& model) {
  check_model(model);
  io::BinaryWriter out;
  out.magic("SCNN");
  out.u32(kModelVersion);
  const CnnConfig& c = model.config;
  for (int v : {c.c1_size, c.p1_size, c.c2_size, c.p2_size, c.c1_filters, c.c2_filters, c.hidden_nodes,
                c.num_classes}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.u8(model.head_discardable ? 1 : 0);
  out.u32(kTensorCount);
  auto tensor = [&](const auto& t, bool is_vector) {
    if (is_vector) {
      out.u32(1);
      out.u32(static_cast<std::uint32_t>(t.size()));
    } else {
      out.u32(2);
      out.u32(static_cast<std::uint32_t>(t.rows()));
      out.u32(static_cast<std::uint32_t>(t.cols()));
    }
    out.f32_array(std::span<const double>(t.data(), static_cast<std::size_t>(t.size())));
  };
  const CnnWeights& w = model.weights;
  tensor(w.conv1_w, false);
  tensor(w.conv1_b, true);
  tensor(w.conv2_w, false);
  tensor(w.conv2_b, true);
  tensor(w.hidden_w, false);
  tensor(w.hidden_b, true);
  tensor(w.out_w, false);
  tensor(w.out_b, true);
  return out.buffer();
}

CnnModel decode_model(std::string bytes, const std::string& source) {
  io::BinaryReader in(std::move(bytes), source);
  in.expect_magic("SCNN");
  if (const auto version = in.u32(); version != kModelVersion) {
    throw FormatError(source + ": unsupported model version " + std::to_string(version));
  }
  CnnConfig c;
  for (int* v : {&c.c1_size, &c.p1_size, &c.c2_size, &c.p2_size, &c.c1_filters, &c.c2_filters,
                 &c.hidden_nodes, &c.num_classes}) {
    *v = static_cast<int>(in.u32());
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(source + ": " + e.what());
  }
  CnnModel model = CnnModel::zeros(c);
  model.head_discardable = in.u8() != 0;
  if (in.u32() != kTensorCount) throw FormatError(source + ": unexpected tensor count");
  auto tensor = [&](auto& t) {
    const std::uint32_t rank = in.u32();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = in.u32();
    const bool ok = (rank == 1 && dims[0] == t.size()) ||
                    (rank == 2 && dims[0] == t.rows() && dims[1] == t.cols());
    if (!ok) throw FormatError(source + ": tensor shape does not match configuration");
    const auto values = in.f32_array(static_cast<std::size_t>(t.size()));
    std::copy(values.begin(), values.end(), t.data());
  };
  CnnWeights& w = model.weights;
  tensor(w.conv1_w);
  tensor(w.conv1_b);
  tensor(w.conv2_w);
  tensor(w.conv2_b);
  tensor(w.hidden_w);
  tensor(w.hidden_b);
  tensor(w.out_w);
  tensor(w.out_b);
  in.expect_end();
  if (!model.weights.all_finite()) throw FormatError(source + ": non-finite weights");
  return model;
}

void save_model(const CnnModel& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_model(model));
}

CnnModel load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path), path.string()); }

}  // namespace writerid::cnn
