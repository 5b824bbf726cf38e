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

#include "writerid/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "writerid/binary_io.hpp"

namespace writerid::synthetic {
namespace {

struct Range {
  double lo;
  double hi;
};

constexpr Range kSlant{-0.6, 0.6};
constexpr Range kWidth{1.5, 5.0};
constexpr Range kCurvature{0.0, 4.0};
constexpr Range kHeight{12.0, 28.0};
constexpr Range kAspect{0.5, 1.1};

void stamp_disc(imaging::GrayImage& img, double cx, double cy, double radius, std::uint8_t ink) {
  const int r = static_cast<int>(std::ceil(radius));
  const int x0 = static_cast<int>(std::lround(cx));
  const int y0 = static_cast<int>(std::lround(cy));
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int x = x0 + dx;
      const int y = y0 + dy;
      if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) continue;
      const double ex = x - cx;
      const double ey = y - cy;
      if (ex * ex + ey * ey <= radius * radius) img.at(y, x) = std::min(img.at(y, x), ink);
    }
  }
}

struct Stroke {
  double u, v, theta, length, bend;
};
using Glyph = std::vector<Stroke>;

constexpr int kAlphabetSize = 10;

// Stroke parameters are in glyph units; bend is scaled by the style's curvature.
std::vector<Glyph> make_alphabet(std::uint64_t seed, double aspect) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Glyph> alphabet(kAlphabetSize);
  for (auto& glyph : alphabet) {
    glyph.resize(1 + static_cast<std::size_t>(unit(rng) * 3.0));
    for (auto& s : glyph) {
      s.u = unit(rng) * aspect;
      s.v = unit(rng);
      s.theta = unit(rng) * 2.0 * std::numbers::pi;
      s.length = 0.6 + 0.8 * unit(rng);
      s.bend = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.6 + 0.8 * unit(rng));
    }
  }
  return alphabet;
}

}  // namespace

std::vector<WriterStyle> sample_styles(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto stratified = [&](Range range) {
    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      out[i] = range.lo + (range.hi - range.lo) * (static_cast<double>(perm[i]) + unit(rng)) / static_cast<double>(count);
    }
    return out;
  };
  const auto slant = stratified(kSlant);
  const auto width = stratified(kWidth);
  const auto curvature = stratified(kCurvature);
  const auto height = stratified(kHeight);
  const auto aspect = stratified(kAspect);
  std::vector<WriterStyle> styles(count);
  for (std::size_t i = 0; i < count; ++i) {
    styles[i] = {slant[i], width[i], curvature[i], height[i], aspect[i], derive_seed(seed, "alphabet" + std::to_string(i))};
  }
  return styles;
}

imaging::GrayImage render_document(const WriterStyle& base, const PageLayout& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);

  WriterStyle s = base;
  s.slant += 0.02 * jitter(rng);
  s.stroke_width *= 1.0 + 0.05 * jitter(rng);
  s.curvature *= 1.0 + 0.05 * jitter(rng);
  s.glyph_height *= 1.0 + 0.03 * jitter(rng);

  const int paper = 215 + static_cast<int>(unit(rng) * 20.0);
  const int ink = 35 + static_cast<int>(unit(rng) * 20.0);
  imaging::GrayImage img(layout.width, layout.height, static_cast<std::uint8_t>(paper));
  std::uniform_int_distribution<int> paper_noise(-6, 6);
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) img.at(r, c) = static_cast<std::uint8_t>(paper + paper_noise(rng));
  }

  const double h = s.glyph_height;
  const double glyph_w = s.aspect * h;
  const double shear = std::tan(s.slant);
  const double step = 0.25 / h;  // quarter-pixel steps in glyph units
  std::uniform_int_distribution<int> ink_noise(0, 12);
  const auto alphabet = make_alphabet(s.alphabet_seed, base.aspect);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);

  for (double baseline = layout.margin + h; baseline < layout.height - layout.margin; baseline += 1.9 * h) {
    double x = layout.margin + std::max(0.0, -shear * h);
    while (x + glyph_w + std::max(0.0, shear * h) < layout.width - layout.margin) {
      for (const Stroke& stroke : alphabet[pick(rng)]) {
        double u = stroke.u + 0.03 * jitter(rng);
        double v = stroke.v + 0.03 * jitter(rng);
        double theta = stroke.theta + 0.08 * jitter(rng);
        const double length = stroke.length * (1.0 + 0.05 * jitter(rng));
        const double kappa = s.curvature * stroke.bend;
        const auto shade = static_cast<std::uint8_t>(ink + ink_noise(rng));
        for (double t = 0.0; t < length; t += step) {
          theta += kappa * step;
          u += std::cos(theta) * step;
          v += std::sin(theta) * step;
          const double px = x + (u + v * shear) * h;
          const double py = baseline - v * h;
          stamp_disc(img, px, py, 0.5 * s.stroke_width, shade);
        }
      }
      x += glyph_w * (0.9 + 0.3 * unit(rng));
      if (unit(rng) < 0.15) x += 0.8 * glyph_w;
    }
  }
  return img;
}

std::vector<BarSample> oriented_bars(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<BarSample> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    BarSample& s = out[i];
    s.label = static_cast<int>(i % 4);
    const double angle = s.label * std::numbers::pi / 4.0;
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);
    const double offset = (unit(rng) - 0.5) * 8.0;
    const double half_len = 8.0 + unit(rng) * 7.0;
    const double half_width = 1.0 + unit(rng);
    const double cx = 15.5 - dy * offset;
    const double cy = 15.5 + dx * offset;
    for (int r = 0; r < imaging::kPatchSide; ++r) {
      for (int c = 0; c < imaging::kPatchSide; ++c) {
        const double px = c - cx;
        const double py = r - cy;
        const double along = px * dx + py * dy;
        const double across = -px * dy + py * dx;
        const bool on_bar = std::abs(along) <= half_len && std::abs(across) <= half_width;
        const double value = (on_bar ? 0.15 : 0.85) + (unit(rng) - 0.5) * 0.2;
        s.patch.pixels[r * imaging::kPatchSide + c] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
    s.patch.center = {16, 16};
  }
  return out;
}

std::filesystem::path write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                    const std::string& manifest_name) {
  const auto styles = sample_styles(spec.writers, spec.seed);
  std::ostringstream manifest;
  for (std::size_t w = 0; w < spec.writers; ++w) {
    char writer[64];
    std::snprintf(writer, sizeof(writer), "%s%03zu", spec.writer_prefix.c_str(), w);
    for (std::size_t d = 1; d <= spec.docs_per_writer; ++d) {
      const std::string name = std::string(writer) + "_" + std::to_string(d);
      const auto img = render_document(styles[w], spec.layout, derive_seed(spec.seed, name));
      imaging::save_png(img, dir / "images" / (name + ".png"));
      manifest << "images/" << name << ".png\n";
    }
  }
  const auto path = dir / manifest_name;
  io::write_file_atomic(path, manifest.str());
  return path;
}

}  // namespace writerid::synthetic
