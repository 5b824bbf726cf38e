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

// Document rasters, Otsu binarization, ink contours and contour-centered
// 32x32 patch sampling.

#ifndef WRITERID_IMAGING_HPP_
#define WRITERID_IMAGING_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "writerid/common.hpp"

namespace writerid::imaging {

inline constexpr int kPatchSide = 32;
inline constexpr int kPatchSize = kPatchSide * kPatchSide;

// 8-bit grayscale raster, row-major.
class GrayImage {
 public:
  GrayImage(int width, int height, std::vector<std::uint8_t> data);
  GrayImage(int width, int height, std::uint8_t fill);

  int width() const { return width_; }
  int height() const { return height_; }
  std::uint8_t at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  std::uint8_t& at(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  std::span<const std::uint8_t> data() const { return data_; }

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> data_;
};

// Ink mask; true marks a foreground pixel.
class BinaryImage {
 public:
  BinaryImage(int width, int height);
  BinaryImage(int width, int height, std::vector<std::uint8_t> mask);

  int width() const { return width_; }
  int height() const { return height_; }
  bool ink(int row, int col) const { return mask_[static_cast<std::size_t>(row) * width_ + col] != 0; }
  void set(int row, int col, bool value) {
    mask_[static_cast<std::size_t>(row) * width_ + col] = value ? 1 : 0;
  }
  std::span<const std::uint8_t> mask() const { return mask_; }

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> mask_;
};

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

// A 32x32 window with intensities scaled to [0,1]. The window centered at
// (r, c) spans rows r-16..r+15 and columns c-16..c+15.
struct Patch {
  std::array<float, kPatchSize> pixels{};
  Pixel center;
  std::string source_doc;
};

class DegenerateHistogramError : public Error {
 public:
  using Error::Error;
};

// Threshold maximizing the between-class variance of the 256-bin histogram,
// where class 0 is intensities <= threshold. The smallest maximizer wins.
// Throws DegenerateHistogramError when the image holds a single intensity.
int otsu_threshold(const GrayImage& img);

// Ink is intensity <= threshold, or > threshold when `invert` is set
// (light-on-dark sources).
BinaryImage binarize(const GrayImage& img, int threshold, bool invert = false);

// Ink pixels with at least one non-ink 4-neighbour; pixels on the image
// border count as touching background. Row-major order.
std::vector<Pixel> extract_contour(const BinaryImage& bin);

struct SamplingParams {
  int stride = 1;
  // 0 disables the cap.
  std::size_t max_patches = 0;
  std::uint64_t seed = 0;
};

// Every stride-th contour point whose window fits inside the image, capped
// to max_patches by seeded uniform subsampling that keeps contour order.
std::vector<Patch> sample_patches(const GrayImage& img, std::span<const Pixel> contour,
                                  const SamplingParams& params, const std::string& source_doc = {});

// Reads 8-bit PNG (gray, gray+alpha, RGB, RGBA, palette) or binary/ASCII PGM.
// Colour is reduced to luma round(0.299 R + 0.587 G + 0.114 B).
GrayImage load_image(const std::filesystem::path& path);

void save_png(const GrayImage& img, const std::filesystem::path& path);
// Ink rendered black on white.
void save_png(const BinaryImage& bin, const std::filesystem::path& path);

// Inverse of the ink rendering used by save_png(BinaryImage).
BinaryImage binary_from_rendering(const GrayImage& rendered);

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b);

}  // namespace writerid::imaging

#endif  // WRITERID_IMAGING_HPP_
