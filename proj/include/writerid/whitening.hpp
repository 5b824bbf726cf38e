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

#ifndef WRITERID_WHITENING_HPP_
#define WRITERID_WHITENING_HPP_

#include <filesystem>
#include <string>

#include "writerid/common.hpp"

namespace writerid::whitening {

enum class WhiteningMode : std::uint8_t { kZca = 0, kPca = 1 };

std::string to_string(WhiteningMode mode);
WhiteningMode parse_mode(std::string_view name);

// y = projection * (x - mean). With the sample covariance C = U L U^T:
//   PCA: projection = (L + eps I)^(-1/2) U^T    (rows by decreasing variance)
//   ZCA: projection = U (L + eps I)^(-1/2) U^T  (symmetric)
struct WhiteningTransform {
  WhiteningMode mode = WhiteningMode::kZca;
  Vector mean;
  Matrix projection;
  double epsilon = 1e-5;

  Eigen::Index dim() const { return mean.size(); }
};

inline constexpr double kDefaultEpsilon = 1e-5;

// Sample covariance uses the unbiased 1/(T-1) normalization; needs T >= 2.
WhiteningTransform fit_whitening(const Matrix& x, WhiteningMode mode, double epsilon = kDefaultEpsilon);

// Projection only, without the L2 step.
Matrix project(const WhiteningTransform& tf, const Matrix& x);

// Projects every row, then scales it to unit L2 norm. Rows that project to
// exactly zero stay zero.
Matrix apply_whitening(const WhiteningTransform& tf, const Matrix& x);

// Unbiased sample covariance of the rows of x.
Matrix sample_covariance(const Matrix& x);

// "SWHT" file: magic, mode byte, u32 D, D mean values, D*D projection values
// (row-major), then epsilon as a trailing f32.
std::string encode_transform(const WhiteningTransform& tf);
WhiteningTransform decode_transform(std::string bytes, const std::string& source = "whitening");
void save_transform(const WhiteningTransform& tf, const std::filesystem::path& path);
WhiteningTransform load_transform(const std::filesystem::path& path);

}  // namespace writerid::whitening

#endif  // WRITERID_WHITENING_HPP_
