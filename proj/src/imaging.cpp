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

#include "writerid/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <numeric>
#include <random>

#include <png.h>

#include "writerid/binary_io.hpp"

namespace writerid::imaging {

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width <= 0 || height <= 0) throw ConfigError("image dimensions must be positive");
  if (data_.size() != static_cast<std::size_t>(width) * height) {
    throw ConfigError("image data length does not match width*height");
  }
}

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : GrayImage(width, height,
                std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0),
                                          fill)) {}

BinaryImage::BinaryImage(int width, int height)
    : BinaryImage(width, height,
                  std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0)) {}

BinaryImage::BinaryImage(int width, int height, std::vector<std::uint8_t> mask)
    : width_(width), height_(height), mask_(std::move(mask)) {
  if (width <= 0 || height <= 0) throw ConfigError("mask dimensions must be positive");
  if (mask_.size() != static_cast<std::size_t>(width) * height) {
    throw ConfigError("mask length does not match width*height");
  }
}

int otsu_threshold(const GrayImage& img) {
  std::array<std::uint64_t, 256> hist{};
  for (auto v : img.data()) ++hist[v];
  if (std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }) < 2) {
    throw DegenerateHistogramError("otsu: image has a single intensity, no class separation");
  }

  const double total = static_cast<double>(img.data().size());
  double total_sum = 0.0;
  for (int i = 0; i < 256; ++i) total_sum += static_cast<double>(i) * hist[i];

  // Between-class variance up to the constant factor 1/N^2: n0*n1*(m0-m1)^2.
  int best = 0;
  double best_score = -1.0;
  double n0 = 0.0;
  double s0 = 0.0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += static_cast<double>(t) * hist[t];
    const double n1 = total - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double diff = s0 / n0 - (total_sum - s0) / n1;
    const double score = n0 * n1 * diff * diff;
    if (score > best_score) {
      best_score = score;
      best = t;
    }
  }
  return best;
}

BinaryImage binarize(const GrayImage& img, int threshold, bool invert) {
  std::vector<std::uint8_t> mask(img.data().size());
  std::transform(img.data().begin(), img.data().end(), mask.begin(), [&](std::uint8_t v) {
    const bool dark = v <= threshold;
    return static_cast<std::uint8_t>(dark != invert ? 1 : 0);
  });
  return BinaryImage(img.width(), img.height(), std::move(mask));
}

std::vector<Pixel> extract_contour(const BinaryImage& bin) {
  const int h = bin.height();
  const int w = bin.width();
  auto background = [&](int r, int c) { return r < 0 || c < 0 || r >= h || c >= w || !bin.ink(r, c); };
  std::vector<Pixel> out;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!bin.ink(r, c)) continue;
      if (background(r - 1, c) || background(r + 1, c) || background(r, c - 1) || background(r, c + 1)) {
        out.push_back({r, c});
      }
    }
  }
  return out;
}

std::vector<Patch> sample_patches(const GrayImage& img, std::span<const Pixel> contour,
                                  const SamplingParams& params, const std::string& source_doc) {
  if (params.stride < 1) throw ConfigError("sample_patches: stride must be >= 1");
  constexpr int kHalf = kPatchSide / 2;
  auto fits = [&](const Pixel& p) {
    return p.row - kHalf >= 0 && p.row + kHalf - 1 < img.height() && p.col - kHalf >= 0 &&
           p.col + kHalf - 1 < img.width();
  };

  std::vector<Pixel> chosen;
  std::size_t eligible = 0;
  for (const auto& p : contour) {
    if (!fits(p)) continue;
    if (eligible++ % static_cast<std::size_t>(params.stride) == 0) chosen.push_back(p);
  }

  if (params.max_patches > 0 && chosen.size() > params.max_patches) {
    std::vector<std::size_t> idx(chosen.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(params.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(params.max_patches);
    std::sort(idx.begin(), idx.end());
    std::vector<Pixel> kept;
    kept.reserve(idx.size());
    for (auto i : idx) kept.push_back(chosen[i]);
    chosen = std::move(kept);
  }

  std::vector<Patch> patches(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    auto& patch = patches[i];
    patch.center = chosen[i];
    patch.source_doc = source_doc;
    for (int dr = 0; dr < kPatchSide; ++dr) {
      for (int dc = 0; dc < kPatchSide; ++dc) {
        const auto v = img.at(chosen[i].row - kHalf + dr, chosen[i].col - kHalf + dc);
        patch.pixels[dr * kPatchSide + dc] = static_cast<float>(v) / 255.0f;
      }
    }
  }
  return patches;
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  // Integer form of round(0.299R + 0.587G + 0.114B), halves rounded up.
  return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

namespace {

GrayImage load_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError(path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGBA : PNG_FORMAT_GA;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(path.string() + ": " + msg);
  }
  const int w = static_cast<int>(image.width);
  const int h = static_cast<int>(image.height);
  const int channels = color ? 4 : 2;
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const png_byte* px = &buffer[i * channels];
    const unsigned value = color ? luma(px[0], px[1], px[2]) : px[0];
    const unsigned alpha = px[channels - 1];
    // Transparent regions composite onto white paper.
    gray[i] = static_cast<std::uint8_t>((value * alpha + 255u * (255u - alpha) + 127u) / 255u);
  }
  return GrayImage(w, h, std::move(gray));
}

GrayImage load_pgm(const std::filesystem::path& path) {
  const std::string raw = io::read_file(path);
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < raw.size()) {
      if (raw[pos] == '#') {
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < raw.size() && std::isdigit(static_cast<unsigned char>(raw[pos]))) ++pos;
    if (start == pos) throw FormatError(path.string() + ": malformed PGM header");
    return std::stol(raw.substr(start, pos - start));
  };
  const bool binary = raw[1] == '5';
  const long w = next_token();
  const long h = next_token();
  const long maxval = next_token();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw FormatError(path.string() + ": unsupported PGM dimensions or maxval");
  }
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w * h));
  auto scale = [&](long v) {
    if (v > maxval) throw FormatError(path.string() + ": PGM sample exceeds maxval");
    return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  };
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (raw.size() - pos < data.size()) throw FormatError(path.string() + ": truncated PGM");
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = scale(static_cast<unsigned char>(raw[pos + i]));
    }
  } else {
    for (auto& v : data) v = scale(next_token());
  }
  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

void write_gray_png(int w, int h, const std::vector<std::uint8_t>& data, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_GRAY;
  auto tmp = path;
  tmp += ".tmp";
  if (!png_image_write_to_file(&image, tmp.c_str(), 0, data.data(), 0, nullptr)) {
    throw Error(path.string() + ": " + image.message);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

GrayImage load_image(const std::filesystem::path& path) {
  const std::string head = io::read_file(path).substr(0, 8);
  if (head.size() >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '2')) return load_pgm(path);
  if (head.size() == 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(head.data()), 0, 8) == 0) {
    return load_png(path);
  }
  throw FormatError(path.string() + ": not a PNG or PGM image");
}

void save_png(const GrayImage& img, const std::filesystem::path& path) {
  write_gray_png(img.width(), img.height(), {img.data().begin(), img.data().end()}, path);
}

void save_png(const BinaryImage& bin, const std::filesystem::path& path) {
  std::vector<std::uint8_t> data(bin.mask().size());
  std::transform(bin.mask().begin(), bin.mask().end(), data.begin(),
                 [](std::uint8_t m) { return static_cast<std::uint8_t>(m ? 0 : 255); });
  write_gray_png(bin.width(), bin.height(), data, path);
}

BinaryImage binary_from_rendering(const GrayImage& rendered) {
  std::vector<std::uint8_t> mask(rendered.data().size());
  std::transform(rendered.data().begin(), rendered.data().end(), mask.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v < 128 ? 1 : 0); });
  return BinaryImage(rendered.width(), rendered.height(), std::move(mask));
}

}  // namespace writerid::imaging
