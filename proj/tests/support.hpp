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


// Random generators and slow reference implementations shared by the tests.
// The references are written as plain loops straight from the definitions
// and deliberately share no code with the library.

#ifndef WRITERID_TESTS_SUPPORT_HPP_
#define WRITERID_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "writerid/cnn.hpp"
#include "writerid/common.hpp"
#include "writerid/gmm.hpp"
#include "writerid/imaging.hpp"
#include "writerid/retrieval.hpp"

namespace writerid::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// A well-formed random diagonal GMM.
inline gmm::GmmModel random_gmm(int k, int d, std::mt19937_64& rng) {
  gmm::GmmModel m;
  m.weights.resize(k);
  for (int i = 0; i < k; ++i) m.weights(i) = uniform(rng, 0.2, 1.0);
  m.weights /= m.weights.sum();
  m.means = random_matrix(k, d, rng, 1.5);
  m.variances.resize(k, d);
  for (Eigen::Index i = 0; i < m.variances.size(); ++i) m.variances.data()[i] = uniform(rng, 0.3, 2.5);
  return m;
}

inline imaging::Patch random_patch(std::mt19937_64& rng) {
  imaging::Patch p;
  for (auto& v : p.pixels) v = static_cast<float>(uniform(rng, 0.0, 1.0));
  return p;
}

// ---------------------------------------------------------------------------
// Reference GMM quantities.

inline double ref_log_gaussian(const gmm::GmmModel& m, int k, const Eigen::RowVectorXd& x) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double v = m.variances(k, j);
    const double diff = x(j) - m.means(k, j);
    s += -0.5 * std::log(2.0 * M_PI * v) - 0.5 * diff * diff / v;
  }
  return s;
}

// Dense T x K posteriors with top-c truncation (ties to the lower index) and
// optional renormalization.
inline Matrix ref_posteriors(const gmm::GmmModel& m, const Matrix& x, int top_c, bool renormalize) {
  const int k = static_cast<int>(m.components());
  Matrix g = Matrix::Zero(x.rows(), k);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    std::vector<double> lp(k);
    double mx = -INFINITY;
    for (int c = 0; c < k; ++c) {
      lp[c] = std::log(m.weights(c)) + ref_log_gaussian(m, c, x.row(t));
      mx = std::max(mx, lp[c]);
    }
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(lp[c] - mx);
    std::vector<double> p(k);
    for (int c = 0; c < k; ++c) p[c] = std::exp(lp[c] - mx) / z;
    std::vector<bool> keep(k, false);
    for (int r = 0; r < top_c; ++r) {
      int best = -1;
      for (int c = 0; c < k; ++c) {
        if (keep[c]) continue;
        if (best < 0 || p[c] > p[best]) best = c;
      }
      keep[best] = true;
    }
    double kept = 0.0;
    for (int c = 0; c < k; ++c) kept += keep[c] ? p[c] : 0.0;
    for (int c = 0; c < k; ++c) {
      if (keep[c]) g(t, c) = renormalize ? p[c] / kept : p[c];
    }
  }
  return g;
}

inline Vector ref_power_l2(Vector v, double power) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = v(i);
    v(i) = (a < 0 ? -1.0 : 1.0) * std::pow(std::abs(a), power);
  }
  double n = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) n += v(i) * v(i);
  n = std::sqrt(n);
  if (n > 0) v /= n;
  return v;
}

// KL-normalized (or SSR+L2) supervector of MAP-adapted means.
inline Vector ref_supervector(const gmm::GmmModel& m, const Matrix& x, double tau, int top_c, bool renormalize,
                              bool kl, double power) {
  const Matrix g = ref_posteriors(m, x, top_c, renormalize);
  const int k = static_cast<int>(m.components());
  const int d = static_cast<int>(m.dim());
  Vector out(k * d);
  for (int c = 0; c < k; ++c) {
    double n = 0.0;
    for (Eigen::Index t = 0; t < x.rows(); ++t) n += g(t, c);
    const double alpha = n / (n + tau);
    for (int j = 0; j < d; ++j) {
      double first = 0.0;
      for (Eigen::Index t = 0; t < x.rows(); ++t) first += g(t, c) * x(t, j);
      const double adapted = n > 0 ? alpha * (first / n) + (1.0 - alpha) * m.means(c, j) : m.means(c, j);
      out(c * d + j) = kl ? std::sqrt(m.weights(c)) * adapted / std::sqrt(m.variances(c, j)) : adapted;
    }
  }
  return kl ? out : ref_power_l2(out, power);
}

inline Vector ref_vlad(const Matrix& centers, const Matrix& x, double power) {
  const Eigen::Index k = centers.rows();
  const Eigen::Index d = centers.cols();
  Vector out = Vector::Zero(k * d);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    Eigen::Index best = 0;
    double best_d = INFINITY;
    for (Eigen::Index c = 0; c < k; ++c) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) s += (x(t, j) - centers(c, j)) * (x(t, j) - centers(c, j));
      if (s < best_d) {
        best_d = s;
        best = c;
      }
    }
    for (Eigen::Index j = 0; j < d; ++j) out(best * d + j) += x(t, j) - centers(best, j);
  }
  return ref_power_l2(out, power);
}

// Improved Fisher vector: per component [mean block, sigma block], power+L2.
inline Vector ref_fisher(const gmm::GmmModel& m, const Matrix& x, double power) {
  const Matrix g = ref_posteriors(m, x, static_cast<int>(m.components()), false);
  const Eigen::Index k = m.components();
  const Eigen::Index d = m.dim();
  const double tt = static_cast<double>(x.rows());
  Vector out(2 * k * d);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double sd = std::sqrt(m.variances(c, j));
      double gm = 0.0;
      double gs = 0.0;
      for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double z = (x(t, j) - m.means(c, j)) / sd;
        gm += g(t, c) * z;
        gs += g(t, c) * (z * z - 1.0);
      }
      out(2 * c * d + j) = gm / (tt * std::sqrt(m.weights(c)));
      out((2 * c + 1) * d + j) = gs / (tt * std::sqrt(2.0 * m.weights(c)));
    }
  }
  return ref_power_l2(out, power);
}

// ---------------------------------------------------------------------------
// Reference CNN forward pass: direct nested loops over the definitions.

struct RefActivations {
  Vector hidden;
  Vector logits;
};

inline RefActivations ref_forward(const cnn::CnnModel& model, const imaging::Patch& patch) {
  const auto& c = model.config;
  const auto& w = model.weights;
  const int in = imaging::kPatchSide;
  auto relu = [](double v) { return v > 0 ? v : 0.0; };

  const int s1 = in - c.c1_size + 1;
  std::vector<double> a1(static_cast<std::size_t>(c.c1_filters) * s1 * s1);
  for (int f = 0; f < c.c1_filters; ++f)
    for (int y = 0; y < s1; ++y)
      for (int x = 0; x < s1; ++x) {
        double s = w.conv1_b(f);
        for (int ky = 0; ky < c.c1_size; ++ky)
          for (int kx = 0; kx < c.c1_size; ++kx)
            s += w.conv1_w(f, ky * c.c1_size + kx) * patch.pixels[(y + ky) * in + x + kx];
        a1[(f * s1 + y) * s1 + x] = relu(s);
      }
  const int p1 = s1 / c.p1_size;
  std::vector<double> m1(static_cast<std::size_t>(c.c1_filters) * p1 * p1);
  for (int f = 0; f < c.c1_filters; ++f)
    for (int y = 0; y < p1; ++y)
      for (int x = 0; x < p1; ++x) {
        double best = -INFINITY;
        for (int dy = 0; dy < c.p1_size; ++dy)
          for (int dx = 0; dx < c.p1_size; ++dx)
            best = std::max(best, a1[(f * s1 + y * c.p1_size + dy) * s1 + x * c.p1_size + dx]);
        m1[(f * p1 + y) * p1 + x] = best;
      }
  const int s2 = p1 - c.c2_size + 1;
  std::vector<double> a2(static_cast<std::size_t>(c.c2_filters) * s2 * s2);
  for (int f = 0; f < c.c2_filters; ++f)
    for (int y = 0; y < s2; ++y)
      for (int x = 0; x < s2; ++x) {
        double s = w.conv2_b(f);
        for (int ch = 0; ch < c.c1_filters; ++ch)
          for (int ky = 0; ky < c.c2_size; ++ky)
            for (int kx = 0; kx < c.c2_size; ++kx)
              s += w.conv2_w(f, (ch * c.c2_size + ky) * c.c2_size + kx) * m1[(ch * p1 + y + ky) * p1 + x + kx];
        a2[(f * s2 + y) * s2 + x] = relu(s);
      }
  const int p2 = s2 / c.p2_size;
  Vector flat(c.c2_filters * p2 * p2);
  for (int f = 0; f < c.c2_filters; ++f)
    for (int y = 0; y < p2; ++y)
      for (int x = 0; x < p2; ++x) {
        double best = -INFINITY;
        for (int dy = 0; dy < c.p2_size; ++dy)
          for (int dx = 0; dx < c.p2_size; ++dx)
            best = std::max(best, a2[(f * s2 + y * c.p2_size + dy) * s2 + x * c.p2_size + dx]);
        flat(f * p2 * p2 + y * p2 + x) = best;
      }
  RefActivations out;
  out.hidden.resize(c.hidden_nodes);
  for (int h = 0; h < c.hidden_nodes; ++h) {
    double s = w.hidden_b(h);
    for (Eigen::Index i = 0; i < flat.size(); ++i) s += w.hidden_w(h, i) * flat(i);
    out.hidden(h) = relu(s);
  }
  out.logits.resize(c.num_classes);
  for (int k = 0; k < c.num_classes; ++k) {
    double s = w.out_b(k);
    for (int h = 0; h < c.hidden_nodes; ++h) s += w.out_w(k, h) * out.hidden(h);
    out.logits(k) = s;
  }
  return out;
}

inline double ref_cross_entropy(const cnn::CnnModel& model, std::span<const cnn::LabeledPatch> batch) {
  double total = 0.0;
  for (const auto& s : batch) {
    const Vector z = ref_forward(model, s.patch).logits;
    const double mx = z.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) sum += std::exp(z(i) - mx);
    total += mx + std::log(sum) - z(s.label);
  }
  return total / static_cast<double>(batch.size());
}

// Analytic vs central finite differences on `samples_per_tensor` entries of
// every tensor; returns the worst |a - n| / max(|a|, |n|, floor).
inline double gradient_check(const cnn::CnnModel& model, std::span<const cnn::LabeledPatch> batch,
                             int samples_per_tensor, std::uint64_t seed, double step = 1e-5,
                             double floor = 1e-6) {
  const auto analytic = cnn::loss_and_gradients(model, batch).gradients;
  std::vector<std::vector<double>> grads;
  analytic.for_each([&](std::string_view, std::span<const double> g) { grads.emplace_back(g.begin(), g.end()); });
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  cnn::CnnModel probe = model;
  std::size_t tensor = 0;
  probe.weights.for_each([&](std::string_view, std::span<double> w) {
    const auto& g = grads[tensor++];
    const int n = std::min<int>(samples_per_tensor, static_cast<int>(w.size()));
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(w.size()) - 1));
      const double saved = w[idx];
      w[idx] = saved + step;
      const double up = ref_cross_entropy(probe, batch);
      w[idx] = saved - step;
      const double down = ref_cross_entropy(probe, batch);
      w[idx] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(g[idx] - numeric) / std::max({std::abs(g[idx]), std::abs(numeric), floor});
      worst = std::max(worst, err);
    }
  });
  return worst;
}

// ---------------------------------------------------------------------------
// Reference retrieval metric.

inline double ref_average_precision(const std::vector<bool>& relevant) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (relevant[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return hits ? sum / hits : 0.0;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("writerid_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace writerid::testing

#endif  // WRITERID_TESTS_SUPPORT_HPP_
