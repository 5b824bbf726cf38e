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

#include "writerid/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "writerid/binary_io.hpp"

namespace writerid::encoding {

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kSupervectorKl:
      return "sv_kl";
    case EncoderKind::kSupervectorSsr:
      return "sv_ssr";
    case EncoderKind::kVlad:
      return "vlad";
    case EncoderKind::kFisher:
      return "fisher";
  }
  return "unknown";
}

EncoderKind parse_encoder(std::string_view name) {
  for (auto kind : {EncoderKind::kSupervectorKl, EncoderKind::kSupervectorSsr, EncoderKind::kVlad,
                    EncoderKind::kFisher}) {
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown encoder '" + std::string(name) + "' (expected sv_kl, sv_ssr, vlad or fisher)");
}

Matrix SparsePosteriors::to_dense() const {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), components);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (const auto& e : rows[t]) out(static_cast<Eigen::Index>(t), e.component) = e.value;
  }
  return out;
}

SparsePosteriors posteriors(const gmm::GmmModel& model, const Matrix& x, int top_c, bool renormalize) {
  const Eigen::Index k = model.components();
  if (top_c < 1 || top_c > k) throw ConfigError("posteriors: top_c must lie in [1, K]");
  const Matrix logp = gmm::weighted_log_densities(model, x);

  SparsePosteriors out;
  out.components = k;
  out.rows.resize(static_cast<std::size_t>(x.rows()));
  std::vector<int> order(static_cast<std::size_t>(k));
  std::vector<double> gamma(static_cast<std::size_t>(k));
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double mx = logp.row(t).maxCoeff();
    const double lse = mx + std::log((logp.row(t).array() - mx).exp().sum());
    for (Eigen::Index j = 0; j < k; ++j) gamma[j] = std::exp(logp(t, j) - lse);

    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + top_c, order.end(), [&](int a, int b) {
      return gamma[a] > gamma[b] || (gamma[a] == gamma[b] && a < b);
    });
    std::sort(order.begin(), order.begin() + top_c);

    auto& row = out.rows[static_cast<std::size_t>(t)];
    row.reserve(static_cast<std::size_t>(top_c));
    double kept = 0.0;
    for (int i = 0; i < top_c; ++i) {
      row.push_back({order[i], gamma[order[i]]});
      kept += gamma[order[i]];
    }
    if (renormalize && kept > 0.0) {
      for (auto& e : row) e.value /= kept;
    }
  }
  return out;
}

Vector soft_counts(const SparsePosteriors& gamma) {
  Vector n = Vector::Zero(gamma.components);
  for (const auto& row : gamma.rows) {
    for (const auto& e : row) n(e.component) += e.value;
  }
  return n;
}

Matrix map_adapt_means(const gmm::GmmModel& model, const Matrix& x, const SparsePosteriors& gamma, double tau) {
  if (!(tau >= 0.0)) throw ConfigError("map_adapt_means: tau must be >= 0");
  if (x.cols() != model.dim() || static_cast<Eigen::Index>(gamma.rows.size()) != x.rows() ||
      gamma.components != model.components()) {
    throw ConfigError("map_adapt_means: posteriors, data and model disagree in shape");
  }
  const Eigen::Index k = model.components();
  Vector n = Vector::Zero(k);
  Matrix first = Matrix::Zero(k, model.dim());
  for (std::size_t t = 0; t < gamma.rows.size(); ++t) {
    for (const auto& e : gamma.rows[t]) {
      n(e.component) += e.value;
      first.row(e.component) += e.value * x.row(static_cast<Eigen::Index>(t));
    }
  }
  Matrix adapted = model.means;
  for (Eigen::Index c = 0; c < k; ++c) {
    if (n(c) <= 0.0) continue;
    const double alpha = n(c) / (n(c) + tau);
    adapted.row(c) = alpha * (first.row(c) / n(c)) + (1.0 - alpha) * model.means.row(c);
  }
  return adapted;
}

Vector power_l2_normalize(Vector v, double power) {
  v = v.unaryExpr([power](double a) { return std::copysign(std::pow(std::abs(a), power), a); });
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

GlobalDescriptor supervector(const Matrix& adapted, const gmm::GmmModel& model, const EncoderParams& params) {
  if (adapted.rows() != model.components() || adapted.cols() != model.dim()) {
    throw ConfigError("supervector: adapted means must be K x D");
  }
  GlobalDescriptor g;
  const Eigen::Index d = model.dim();
  g.values.resize(adapted.size());
  if (params.normalization == Normalization::kKl) {
    if (!(model.variances.array() > 0.0).all()) throw NumericError("supervector: non-positive variance");
    g.encoder = EncoderKind::kSupervectorKl;
    for (Eigen::Index c = 0; c < adapted.rows(); ++c) {
      g.values.segment(c * d, d) = (std::sqrt(model.weights(c)) * adapted.row(c).array() /
                                    model.variances.row(c).array().sqrt())
                                       .matrix()
                                       .transpose();
    }
  } else {
    g.encoder = EncoderKind::kSupervectorSsr;
    for (Eigen::Index c = 0; c < adapted.rows(); ++c) g.values.segment(c * d, d) = adapted.row(c).transpose();
    g.values = power_l2_normalize(std::move(g.values), params.power);
  }
  return g;
}

GlobalDescriptor encode_supervector(const gmm::GmmModel& model, const Matrix& x, const EncoderParams& params) {
  if (x.rows() == 0) throw EmptyDocumentError("supervector: document has no descriptors");
  const SparsePosteriors gamma = posteriors(model, x, params.top_c, params.renormalize_truncated);
  return supervector(map_adapt_means(model, x, gamma, params.tau), model, params);
}

GlobalDescriptor encode_vlad(const gmm::KmeansModel& kmeans, const Matrix& x, double power) {
  if (x.rows() == 0) throw EmptyDocumentError("vlad: document has no descriptors");
  if (x.cols() != kmeans.dim()) throw ConfigError("vlad: dimension mismatch");
  const Eigen::Index d = kmeans.dim();
  Matrix residuals = Matrix::Zero(kmeans.components(), d);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const int c = gmm::nearest_center(kmeans, x.row(t));
    residuals.row(c) += x.row(t) - kmeans.centers.row(c);
  }
  GlobalDescriptor g;
  g.encoder = EncoderKind::kVlad;
  g.values = power_l2_normalize(Eigen::Map<const Vector>(residuals.data(), residuals.size()), power);
  return g;
}

GlobalDescriptor encode_fisher(const gmm::GmmModel& model, const Matrix& x, double power) {
  if (x.rows() == 0) throw EmptyDocumentError("fisher: document has no descriptors");
  const Eigen::Index k = model.components();
  const Eigen::Index d = model.dim();
  const SparsePosteriors gamma = posteriors(model, x, static_cast<int>(k), false);
  const Matrix sigma = model.variances.cwiseSqrt();
  Matrix grad_mu = Matrix::Zero(k, d);
  Matrix grad_sigma = Matrix::Zero(k, d);
  for (std::size_t t = 0; t < gamma.rows.size(); ++t) {
    for (const auto& e : gamma.rows[t]) {
      const Eigen::RowVectorXd z =
          (x.row(static_cast<Eigen::Index>(t)) - model.means.row(e.component)).cwiseQuotient(sigma.row(e.component));
      grad_mu.row(e.component) += e.value * z;
      grad_sigma.row(e.component) += e.value * (z.array().square() - 1.0).matrix();
    }
  }
  const double tt = static_cast<double>(x.rows());
  Vector v(2 * k * d);
  for (Eigen::Index c = 0; c < k; ++c) {
    v.segment(2 * c * d, d) = grad_mu.row(c).transpose() / (tt * std::sqrt(model.weights(c)));
    v.segment((2 * c + 1) * d, d) = grad_sigma.row(c).transpose() / (tt * std::sqrt(2.0 * model.weights(c)));
  }
  GlobalDescriptor g;
  g.encoder = EncoderKind::kFisher;
  g.values = power_l2_normalize(std::move(v), power);
  return g;
}

namespace {
constexpr std::uint32_t kDescriptorVersion = 1;
}  // namespace

std::string encode_descriptor_set(const Matrix& x) {
  io::BinaryWriter out;
  out.magic("CAFV");
  out.u32(kDescriptorVersion);
  out.u32(static_cast<std::uint32_t>(x.rows()));
  out.u32(static_cast<std::uint32_t>(x.cols()));
  out.f32_array(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  return out.buffer();
}

Matrix decode_descriptor_set(std::string bytes, const std::string& source) {
  io::BinaryReader in(std::move(bytes), source);
  in.expect_magic("CAFV");
  if (in.u32() != kDescriptorVersion) throw FormatError(source + ": unsupported descriptor-set version");
  const std::uint32_t t = in.u32();
  const std::uint32_t d = in.u32();
  const auto values = in.f32_array(static_cast<std::size_t>(t) * d);
  in.expect_end();
  return Eigen::Map<const Matrix>(values.data(), t, d);
}

void save_descriptor_set(const Matrix& x, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_descriptor_set(x));
}

Matrix load_descriptor_set(const std::filesystem::path& path) {
  return decode_descriptor_set(io::read_file(path), path.string());
}

std::string encode_global_descriptor(const GlobalDescriptor& g) {
  io::BinaryWriter out;
  out.magic("SENC");
  out.u8(static_cast<std::uint8_t>(g.encoder));
  out.u32(static_cast<std::uint32_t>(g.values.size()));
  out.string(g.writer_id);
  out.string(g.doc_id);
  out.f32_array(std::span<const double>(g.values.data(), static_cast<std::size_t>(g.values.size())));
  return out.buffer();
}

GlobalDescriptor decode_global_descriptor(std::string bytes, const std::string& source) {
  io::BinaryReader in(std::move(bytes), source);
  in.expect_magic("SENC");
  const std::uint8_t tag = in.u8();
  if (tag > static_cast<std::uint8_t>(EncoderKind::kFisher)) throw FormatError(source + ": unknown encoder tag");
  GlobalDescriptor g;
  g.encoder = static_cast<EncoderKind>(tag);
  const std::uint32_t n = in.u32();
  g.writer_id = in.string();
  g.doc_id = in.string();
  const auto values = in.f32_array(n);
  in.expect_end();
  g.values = Eigen::Map<const Vector>(values.data(), n);
  if (!g.values.allFinite()) throw FormatError(source + ": non-finite payload");
  return g;
}

void save_global_descriptor(const GlobalDescriptor& g, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_global_descriptor(g));
}

GlobalDescriptor load_global_descriptor(const std::filesystem::path& path) {
  return decode_global_descriptor(io::read_file(path), path.string());
}

}  // namespace writerid::encoding
