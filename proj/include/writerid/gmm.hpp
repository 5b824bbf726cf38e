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

// Dictionaries for the encoders: a diagonal-covariance GMM fitted by EM and a
// k-means codebook fitted with mini-batch updates.

#ifndef WRITERID_GMM_HPP_
#define WRITERID_GMM_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "writerid/common.hpp"

namespace writerid::gmm {

struct GmmModel {
  Vector weights;     // K, sums to one
  Matrix means;       // K x D
  Matrix variances;   // K x D, diagonal of each covariance

  Eigen::Index components() const { return weights.size(); }
  Eigen::Index dim() const { return means.cols(); }
  // Throws ConfigError on inconsistent shapes, non-positive variances or
  // weights that do not sum to one.
  void validate() const;
};

struct KmeansModel {
  Matrix centers;  // K x D

  Eigen::Index components() const { return centers.rows(); }
  Eigen::Index dim() const { return centers.cols(); }
};

struct GmmOptions {
  int components = 100;
  int max_iters = 200;
  // Stop once the mean per-sample log-likelihood improves by less than this.
  double tol = 1e-5;
  std::uint64_t seed = 0;
  // Variance floor as a fraction of the mean per-dimension data variance.
  double variance_floor_ratio = 1e-4;
  int init_kmeans_iters = 10;
  int jobs = 1;
};

struct GmmFit {
  GmmModel model;
  // Mean per-sample log-likelihood of the data under the parameters in
  // effect at each E-step; the last entry belongs to the returned model.
  std::vector<double> log_likelihood;
  // Iterations whose M-step re-seeded a starved component. Monotonicity of
  // the log-likelihood is not guaranteed across these.
  std::vector<int> reseed_iterations;
  bool converged = false;
  double variance_floor = 0.0;
};

// EM on a diagonal GMM initialized from seeded k-means++ and Lloyd iterations.
// A component whose soft count vanishes is re-seeded on a random data point.
GmmFit fit_gmm(const Matrix& x, const GmmOptions& options);

// T x K matrix of log(w_k) + log g_k(x_t).
Matrix weighted_log_densities(const GmmModel& model, const Matrix& x);

// Mean per-sample log of the mixture density, via log-sum-exp.
double log_likelihood(const GmmModel& model, const Matrix& x);

// Mini-batch k-means: k-means++ seeding, then `iters` batches drawn with
// replacement; each assigned point moves its center with rate 1/count.
KmeansModel fit_minibatch_kmeans(const Matrix& x, int components, int batch_size, int iters,
                                 std::uint64_t seed);

// Index of the nearest center (squared Euclidean), lowest index on ties.
int nearest_center(const KmeansModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& x);

// Mean squared distance from each row to its nearest center.
double quantization_error(const KmeansModel& model, const Matrix& x);

// "SGMM": magic, u32 K, u32 D, weights, means, variances (f32, row-major).
std::string encode_gmm(const GmmModel& model);
GmmModel decode_gmm(std::string bytes, const std::string& source = "gmm");
void save_gmm(const GmmModel& model, const std::filesystem::path& path);
GmmModel load_gmm(const std::filesystem::path& path);

// "SKMS": magic, u32 K, u32 D, centers (f32, row-major).
std::string encode_kmeans(const KmeansModel& model);
KmeansModel decode_kmeans(std::string bytes, const std::string& source = "kmeans");
void save_kmeans(const KmeansModel& model, const std::filesystem::path& path);
KmeansModel load_kmeans(const std::filesystem::path& path);

}  // namespace writerid::gmm

#endif  // WRITERID_GMM_HPP_
