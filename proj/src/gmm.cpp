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

#include "writerid/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <spdlog/spdlog.h>

#include "writerid/binary_io.hpp"
#include "writerid/parallel.hpp"

namespace writerid::gmm {
namespace {

constexpr Eigen::Index kRowChunk = 4096;
constexpr double kStarvedCount = 1e-6;

Eigen::RowVectorXd squared_distances(const Matrix& centers, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return (centers.rowwise() - x).rowwise().squaredNorm().transpose();
}

// k-means++ seeding. When every remaining point coincides with a chosen
// center, further centers are drawn uniformly.
Matrix kmeans_plus_plus(const Matrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index t = x.rows();
  Matrix centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, t - 1);
  centers.row(0) = x.row(pick(rng));
  Vector d2(t);
  for (Eigen::Index i = 0; i < t; ++i) d2(i) = (x.row(i) - centers.row(0)).squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      double target = unit(rng) * total;
      chosen = t - 1;
      for (Eigen::Index i = 0; i < t; ++i) {
        target -= d2(i);
        if (target < 0.0 && d2(i) > 0.0) {
          chosen = i;
          break;
        }
      }
      while (d2(chosen) == 0.0 && chosen > 0) --chosen;
    } else {
      chosen = pick(rng);
    }
    centers.row(c) = x.row(chosen);
    for (Eigen::Index i = 0; i < t; ++i) d2(i) = std::min(d2(i), (x.row(i) - centers.row(c)).squaredNorm());
  }
  return centers;
}

std::vector<int> assign_all(const Matrix& centers, const Matrix& x) {
  std::vector<int> labels(static_cast<std::size_t>(x.rows()));
  const Eigen::RowVectorXd c2 = centers.rowwise().squaredNorm().transpose();
  for (Eigen::Index begin = 0; begin < x.rows(); begin += kRowChunk) {
    const Eigen::Index rows = std::min(kRowChunk, x.rows() - begin);
    Matrix d = -2.0 * (x.middleRows(begin, rows) * centers.transpose());
    d.rowwise() += c2;
    for (Eigen::Index i = 0; i < rows; ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < d.cols(); ++k) {
        if (d(i, k) < d(i, best)) best = k;
      }
      labels[static_cast<std::size_t>(begin + i)] = static_cast<int>(best);
    }
  }
  return labels;
}

struct Stats {
  double ll = 0.0;
  Vector n;
  Matrix s1;
  Matrix s2;
};

Stats e_step(const GmmModel& m, const Matrix& x, int jobs) {
  const Eigen::Index t = x.rows();
  const Eigen::Index chunks = (t + kRowChunk - 1) / kRowChunk;
  std::vector<Stats> partial(static_cast<std::size_t>(chunks));
  parallel_for(static_cast<std::size_t>(chunks), jobs, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kRowChunk;
    const Eigen::Index rows = std::min(kRowChunk, t - begin);
    const Matrix block = x.middleRows(begin, rows);
    Matrix logp = weighted_log_densities(m, block);
    Stats& s = partial[c];
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double mx = logp.row(i).maxCoeff();
      const double lse = mx + std::log((logp.row(i).array() - mx).exp().sum());
      s.ll += lse;
      logp.row(i) = (logp.row(i).array() - lse).exp();
    }
    s.n = logp.colwise().sum().transpose();
    s.s1.noalias() = logp.transpose() * block;
    s.s2.noalias() = logp.transpose() * block.cwiseAbs2();
  });
  Stats total = std::move(partial[0]);
  for (std::size_t c = 1; c < partial.size(); ++c) {
    total.ll += partial[c].ll;
    total.n += partial[c].n;
    total.s1 += partial[c].s1;
    total.s2 += partial[c].s2;
  }
  total.ll /= static_cast<double>(t);
  return total;
}

}  // namespace

void GmmModel::validate() const {
  const Eigen::Index k = weights.size();
  if (k == 0 || means.rows() != k || variances.rows() != k || variances.cols() != means.cols()) {
    throw ConfigError("gmm: inconsistent parameter shapes");
  }
  if ((weights.array() <= 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-6) {
    throw ConfigError("gmm: weights must be positive and sum to one");
  }
  if (!(variances.array() > 0.0).all() || !means.allFinite() || !variances.allFinite()) {
    throw ConfigError("gmm: variances must be positive and finite");
  }
}

Matrix weighted_log_densities(const GmmModel& m, const Matrix& x) {
  if (x.cols() != m.dim()) {
    throw ConfigError("gmm: data has " + std::to_string(x.cols()) + " dims, model has " +
                      std::to_string(m.dim()));
  }
  const Eigen::Index d = m.dim();
  const Matrix inv_var = m.variances.cwiseInverse();
  const Matrix mean_over_var = m.means.cwiseProduct(inv_var);
  // log w_k - 0.5 (D log 2pi + sum log var + sum mu^2/var)
  const Vector constant =
      (m.weights.array().log() -
       0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
              m.variances.array().log().rowwise().sum() +
              (m.means.cwiseProduct(mean_over_var)).array().rowwise().sum()))
          .matrix();
  Matrix out = x * mean_over_var.transpose() - 0.5 * (x.cwiseAbs2() * inv_var.transpose());
  out.rowwise() += constant.transpose();
  return out;
}

double log_likelihood(const GmmModel& m, const Matrix& x) {
  if (x.rows() == 0) throw ConfigError("log_likelihood: no samples");
  const Matrix logp = weighted_log_densities(m, x);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    const double mx = logp.row(i).maxCoeff();
    sum += mx + std::log((logp.row(i).array() - mx).exp().sum());
  }
  return sum / static_cast<double>(x.rows());
}

GmmFit fit_gmm(const Matrix& x, const GmmOptions& opt) {
  const Eigen::Index t = x.rows();
  const int k = opt.components;
  if (k < 1) throw ConfigError("fit_gmm: need at least one component");
  if (t < k) throw ConfigError("fit_gmm: fewer samples than components");
  if (!x.allFinite()) throw NumericError("fit_gmm: non-finite input");

  const Eigen::RowVectorXd global_mean = x.colwise().mean();
  const Eigen::RowVectorXd global_var =
      (x.rowwise() - global_mean).cwiseAbs2().colwise().sum() / static_cast<double>(t);
  double floor = opt.variance_floor_ratio * global_var.mean();
  if (!(floor > 0.0)) floor = std::numeric_limits<double>::min() * 1e6;
  const Eigen::RowVectorXd reseed_var = global_var.cwiseMax(floor);

  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, t - 1);

  // Lloyd iterations from k-means++ seeds.
  Matrix centers = kmeans_plus_plus(x, k, rng);
  std::vector<int> labels;
  for (int it = 0; it < opt.init_kmeans_iters; ++it) {
    labels = assign_all(centers, x);
    Matrix sums = Matrix::Zero(k, x.cols());
    Vector counts = Vector::Zero(k);
    for (Eigen::Index i = 0; i < t; ++i) {
      sums.row(labels[i]) += x.row(i);
      counts(labels[i]) += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      centers.row(c) = counts(c) > 0 ? Eigen::RowVectorXd(sums.row(c) / counts(c)) : Eigen::RowVectorXd(x.row(pick(rng)));
    }
  }
  labels = assign_all(centers, x);

  GmmFit fit;
  fit.variance_floor = floor;
  GmmModel& m = fit.model;
  m.weights = Vector::Zero(k);
  m.means = centers;
  m.variances = Matrix::Zero(k, x.cols());
  for (Eigen::Index i = 0; i < t; ++i) {
    m.weights(labels[i]) += 1.0;
    m.variances.row(labels[i]) += (x.row(i) - centers.row(labels[i])).cwiseAbs2();
  }
  for (int c = 0; c < k; ++c) {
    if (m.weights(c) > 0) {
      m.variances.row(c) = (m.variances.row(c) / m.weights(c)).cwiseMax(floor);
    } else {
      m.weights(c) = 1.0;
      m.variances.row(c) = reseed_var;
    }
  }
  m.weights /= m.weights.sum();

  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opt.max_iters; ++iter) {
    Stats s = e_step(m, x, opt.jobs);
    fit.log_likelihood.push_back(s.ll);
    if (!std::isfinite(s.ll)) throw NumericError("fit_gmm: log-likelihood became non-finite");
    if (iter > 0 && s.ll - previous < opt.tol) {
      fit.converged = true;
      break;
    }
    previous = s.ll;

    bool reseeded = false;
    for (int c = 0; c < k; ++c) {
      if (s.n(c) < kStarvedCount) {
        const Eigen::Index i = pick(rng);
        spdlog::warn("fit_gmm: component {} starved (n_k={:.3g}) at iteration {}, re-seeded on sample {}", c,
                     s.n(c), iter, i);
        m.means.row(c) = x.row(i);
        m.variances.row(c) = reseed_var;
        m.weights(c) = 1.0 / static_cast<double>(t);
        reseeded = true;
        continue;
      }
      m.weights(c) = s.n(c) / static_cast<double>(t);
      m.means.row(c) = s.s1.row(c) / s.n(c);
      m.variances.row(c) =
          (s.s2.row(c) / s.n(c) - m.means.row(c).cwiseAbs2()).cwiseMax(floor);
    }
    m.weights /= m.weights.sum();
    if (reseeded) fit.reseed_iterations.push_back(iter);
    if (iter + 1 == opt.max_iters) fit.log_likelihood.push_back(log_likelihood(m, x));
  }
  return fit;
}

KmeansModel fit_minibatch_kmeans(const Matrix& x, int components, int batch_size, int iters,
                                 std::uint64_t seed) {
  if (components < 1) throw ConfigError("kmeans: need at least one center");
  if (x.rows() < components) throw ConfigError("kmeans: fewer samples than centers");
  if (batch_size < 1 || iters < 0) throw ConfigError("kmeans: batch_size must be >= 1, iters >= 0");
  std::mt19937_64 rng(seed);
  KmeansModel model{kmeans_plus_plus(x, components, rng)};
  std::vector<double> counts(static_cast<std::size_t>(components), 0.0);
  std::uniform_int_distribution<Eigen::Index> pick(0, x.rows() - 1);
  std::vector<Eigen::Index> batch(static_cast<std::size_t>(batch_size));
  std::vector<int> assigned(static_cast<std::size_t>(batch_size));
  for (int it = 0; it < iters; ++it) {
    for (auto& b : batch) b = pick(rng);
    for (std::size_t j = 0; j < batch.size(); ++j) assigned[j] = nearest_center(model, x.row(batch[j]));
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const int c = assigned[j];
      counts[c] += 1.0;
      const double eta = 1.0 / counts[c];
      model.centers.row(c) = (1.0 - eta) * model.centers.row(c) + eta * x.row(batch[j]);
    }
  }
  return model;
}

int nearest_center(const KmeansModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  if (x.size() != model.dim()) throw ConfigError("kmeans: dimension mismatch");
  const Eigen::RowVectorXd d = squared_distances(model.centers, x);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < d.size(); ++k) {
    if (d(k) < d(best)) best = k;
  }
  return static_cast<int>(best);
}

double quantization_error(const KmeansModel& model, const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    total += (x.row(i) - model.centers.row(nearest_center(model, x.row(i)))).squaredNorm();
  }
  return total / static_cast<double>(x.rows());
}

namespace {

void write_matrix(io::BinaryWriter& out, const auto& m) {
  out.f32_array(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

}  // namespace

std::string encode_gmm(const GmmModel& model) {
  model.validate();
  io::BinaryWriter out;
  out.magic("SGMM");
  out.u32(static_cast<std::uint32_t>(model.components()));
  out.u32(static_cast<std::uint32_t>(model.dim()));
  write_matrix(out, model.weights);
  write_matrix(out, model.means);
  write_matrix(out, model.variances);
  return out.buffer();
}

GmmModel decode_gmm(std::string bytes, const std::string& source) {
  io::BinaryReader in(std::move(bytes), source);
  in.expect_magic("SGMM");
  const std::uint32_t k = in.u32();
  const std::uint32_t d = in.u32();
  GmmModel m;
  const auto w = in.f32_array(k);
  const auto mu = in.f32_array(static_cast<std::size_t>(k) * d);
  const auto var = in.f32_array(static_cast<std::size_t>(k) * d);
  in.expect_end();
  m.weights = Eigen::Map<const Vector>(w.data(), k);
  m.means = Eigen::Map<const Matrix>(mu.data(), k, d);
  m.variances = Eigen::Map<const Matrix>(var.data(), k, d);
  // Single-precision storage perturbs the weight sum slightly.
  m.weights /= m.weights.sum();
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw FormatError(source + ": " + e.what());
  }
  return m;
}

void save_gmm(const GmmModel& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_gmm(model));
}

GmmModel load_gmm(const std::filesystem::path& path) { return decode_gmm(io::read_file(path), path.string()); }

std::string encode_kmeans(const KmeansModel& model) {
  io::BinaryWriter out;
  out.magic("SKMS");
  out.u32(static_cast<std::uint32_t>(model.components()));
  out.u32(static_cast<std::uint32_t>(model.dim()));
  write_matrix(out, model.centers);
  return out.buffer();
}

KmeansModel decode_kmeans(std::string bytes, const std::string& source) {
  io::BinaryReader in(std::move(bytes), source);
  in.expect_magic("SKMS");
  const std::uint32_t k = in.u32();
  const std::uint32_t d = in.u32();
  const auto c = in.f32_array(static_cast<std::size_t>(k) * d);
  in.expect_end();
  if (k == 0) throw FormatError(source + ": empty codebook");
  KmeansModel m{Eigen::Map<const Matrix>(c.data(), k, d)};
  if (!m.centers.allFinite()) throw FormatError(source + ": non-finite centers");
  return m;
}

void save_kmeans(const KmeansModel& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_kmeans(model));
}

KmeansModel load_kmeans(const std::filesystem::path& path) {
  return decode_kmeans(io::read_file(path), path.string());
}

}  // namespace writerid::gmm
