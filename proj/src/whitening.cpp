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

#include "writerid/whitening.hpp"

#include <cmath>

#include "writerid/binary_io.hpp"

namespace writerid::whitening {

std::string to_string(WhiteningMode mode) { return mode == WhiteningMode::kZca ? "zca" : "pca"; }

WhiteningMode parse_mode(std::string_view name) {
  if (name == "zca" || name == "ZCA") return WhiteningMode::kZca;
  if (name == "pca" || name == "PCA") return WhiteningMode::kPca;
  throw ConfigError("unknown whitening mode '" + std::string(name) + "' (expected zca or pca)");
}

Matrix sample_covariance(const Matrix& x) {
  if (x.rows() < 2) throw ConfigError("covariance needs at least two rows");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

WhiteningTransform fit_whitening(const Matrix& x, WhiteningMode mode, double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("whitening: epsilon must be >= 0");
  if (x.cols() == 0) throw ConfigError("whitening: zero-dimensional data");
  if (!x.allFinite()) throw NumericError("whitening: input contains non-finite values");

  const Matrix cov = sample_covariance(x);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("whitening: eigendecomposition failed");

  // Decreasing eigenvalue order; each eigenvector's largest-magnitude entry made
  // positive so the basis is reproducible.
  const Eigen::Index d = x.cols();
  Matrix basis(d, d);
  Vector values(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Eigen::Index src = d - 1 - j;
    Vector v = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(j) = v;
    values(j) = std::max(eig.eigenvalues()(src), 0.0);
  }
  // Eigenvalues at rounding level count as zero.
  const double zero_level = values(0) * 1e-12 * static_cast<double>(d);
  const Vector inv_sqrt = (values.array() + epsilon).rsqrt().matrix();
  if (!inv_sqrt.allFinite() || (epsilon == 0.0 && values(d - 1) <= zero_level)) {
    throw NumericError("whitening: singular covariance; use a positive epsilon");
  }

  WhiteningTransform tf;
  tf.mode = mode;
  tf.epsilon = epsilon;
  tf.mean = x.colwise().mean().transpose();
  const Matrix pca = inv_sqrt.asDiagonal() * basis.transpose();
  tf.projection = mode == WhiteningMode::kPca ? pca : Matrix(basis * pca);
  if (!tf.projection.allFinite()) throw NumericError("whitening: non-finite projection");
  return tf;
}

Matrix project(const WhiteningTransform& tf, const Matrix& x) {
  if (x.cols() != tf.dim()) {
    throw ConfigError("whitening: expected " + std::to_string(tf.dim()) + " columns, got " +
                      std::to_string(x.cols()));
  }
  const Matrix centered = x.rowwise() - tf.mean.transpose();
  return centered * tf.projection.transpose();
}

Matrix apply_whitening(const WhiteningTransform& tf, const Matrix& x) {
  Matrix y = project(tf, x);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double norm = y.row(r).norm();
    if (norm > 0.0) y.row(r) /= norm;
  }
  return y;
}

std::string encode_transform(const WhiteningTransform& tf) {
  io::BinaryWriter out;
  out.magic("SWHT");
  out.u8(static_cast<std::uint8_t>(tf.mode));
  out.u32(static_cast<std::uint32_t>(tf.dim()));
  out.f32_array(std::span<const double>(tf.mean.data(), static_cast<std::size_t>(tf.mean.size())));
  out.f32_array(std::span<const double>(tf.projection.data(), static_cast<std::size_t>(tf.projection.size())));
  out.f32(tf.epsilon);
  return out.buffer();
}

WhiteningTransform decode_transform(std::string bytes, const std::string& source) {
  io::BinaryReader in(std::move(bytes), source);
  in.expect_magic("SWHT");
  const std::uint8_t mode = in.u8();
  if (mode > 1) throw FormatError(source + ": unknown whitening mode byte");
  const std::uint32_t d = in.u32();
  WhiteningTransform tf;
  tf.mode = static_cast<WhiteningMode>(mode);
  const auto mean = in.f32_array(d);
  tf.mean = Eigen::Map<const Vector>(mean.data(), d);
  const auto proj = in.f32_array(static_cast<std::size_t>(d) * d);
  tf.projection = Eigen::Map<const Matrix>(proj.data(), d, d);
  tf.epsilon = in.f32();
  in.expect_end();
  if (!tf.projection.allFinite() || !tf.mean.allFinite()) throw FormatError(source + ": non-finite values");
  return tf;
}

void save_transform(const WhiteningTransform& tf, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_transform(tf));
}

WhiteningTransform load_transform(const std::filesystem::path& path) {
  return decode_transform(io::read_file(path), path.string());
}

}  // namespace writerid::whitening
