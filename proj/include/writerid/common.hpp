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

#ifndef WRITERID_COMMON_HPP_
#define WRITERID_COMMON_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace writerid {

// Row-major so that each row of a descriptor set is one contiguous descriptor.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent shapes, out-of-range parameters, malformed configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corrupted or unexpected artifact contents (bad magic, truncated payload).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise unusable numeric input.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Derives an independent, reproducible seed for a named stage from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

}  // namespace writerid

#endif  // WRITERID_COMMON_HPP_
