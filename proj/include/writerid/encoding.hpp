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

// Aggregation of a document's local descriptors into one global vector.
//
// The main encoder adapts only the GMM means to the document (relevance
// factor tau) and scales each adapted mean by sqrt(w_k) / sigma_k, which is
// the mean part of the symmetrized-KL kernel between adapted and background
// models. Power+L2 supervectors, VLAD and Fisher vectors are baselines.

#ifndef WRITERID_ENCODING_HPP_
#define WRITERID_ENCODING_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "writerid/common.hpp"
#include "writerid/gmm.hpp"

namespace writerid::encoding {

enum class EncoderKind : std::uint8_t {
  kSupervectorKl = 0,
  kSupervectorSsr = 1,
  kVlad = 2,
  kFisher = 3,
};

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder(std::string_view name);

enum class Normalization { kKl, kSsrL2 };

struct EncoderParams {
  double tau = 68.0;
  int top_c = 10;
  bool renormalize_truncated = true;
  Normalization normalization = Normalization::kKl;
  double power = 0.5;
};

struct GlobalDescriptor {
  Vector values;
  std::string writer_id;
  std::string doc_id;
  EncoderKind encoder = EncoderKind::kSupervectorKl;
};

class EmptyDocumentError : public Error {
 public:
  using Error::Error;
};

// Row-sparse T x K posterior matrix. Each row lists (component, value) pairs
// in increasing component order.
struct SparsePosteriors {
  struct Entry {
    int component = 0;
    double value = 0.0;
  };
  Eigen::Index components = 0;
  std::vector<std::vector<Entry>> rows;

  Matrix to_dense() const;
};

// gamma_t(k) = w_k g_k(x_t) / sum_j w_j g_j(x_t) evaluated in log space. All
// but the top_c largest entries of each row are zeroed (ties keep the lower
// component index); the survivors are rescaled to sum to one if requested.
SparsePosteriors posteriors(const gmm::GmmModel& model, const Matrix& x, int top_c, bool renormalize);

// n_k = sum_t gamma_t(k).
Vector soft_counts(const SparsePosteriors& gamma);

// Mean-only MAP adaptation:
//   mu_hat_k = (1/n_k) sum_t gamma_t(k) x_t
//   alpha_k  = n_k / (n_k + tau)
//   mu_k'    = alpha_k mu_hat_k + (1 - alpha_k) mu_k
// Components with n_k = 0 keep the background mean.
Matrix map_adapt_means(const gmm::GmmModel& model, const Matrix& x, const SparsePosteriors& gamma, double tau);

// Concatenates the adapted means in component order after normalization:
// KL scales block k by sqrt(w_k) / sqrt(var_k) elementwise; SSR_L2 applies
// sign(v)|v|^power followed by global L2 normalization. Length K*D.
GlobalDescriptor supervector(const Matrix& adapted_means, const gmm::GmmModel& model, const EncoderParams& params);

// posteriors -> map_adapt_means -> supervector.
GlobalDescriptor encode_supervector(const gmm::GmmModel& model, const Matrix& x, const EncoderParams& params);

// Hard-assignment residual sums per center, then power+L2. Length K*D.
GlobalDescriptor encode_vlad(const gmm::KmeansModel& kmeans, const Matrix& x, double power = 0.5);

// Improved Fisher vector with full posteriors: per component the normalized
// mean gradient block followed by the variance gradient block, then
// power+L2. Length 2*K*D.
GlobalDescriptor encode_fisher(const gmm::GmmModel& model, const Matrix& x, double power = 0.5);

// sign(v)|v|^power, then unit L2 norm (a zero vector stays zero).
Vector power_l2_normalize(Vector v, double power);

// "CAFV" descriptor-set file: magic, u32 version, u32 T, u32 D, T*D values.
std::string encode_descriptor_set(const Matrix& x);
Matrix decode_descriptor_set(std::string bytes, const std::string& source = "descriptors");
void save_descriptor_set(const Matrix& x, const std::filesystem::path& path);
Matrix load_descriptor_set(const std::filesystem::path& path);

// "SENC" global-descriptor file: magic, u8 encoder tag, u32 length,
// writer_id, doc_id (u32-prefixed strings), payload.
std::string encode_global_descriptor(const GlobalDescriptor& g);
GlobalDescriptor decode_global_descriptor(std::string bytes, const std::string& source = "encoding");
void save_global_descriptor(const GlobalDescriptor& g, const std::filesystem::path& path);
GlobalDescriptor load_global_descriptor(const std::filesystem::path& path);

}  // namespace writerid::encoding

#endif  // WRITERID_ENCODING_HPP_
