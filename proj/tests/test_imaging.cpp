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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "support.hpp"
#include "writerid/binary_io.hpp"
#include "writerid/imaging.hpp"

using namespace writerid;
using namespace writerid::imaging;
using writerid::testing::uniform_int;

namespace {

// Exhaustive search with exact integer arithmetic. The between-class
// variance for threshold t is proportional to (N*S0 - n0*S)^2 / (n0*n1);
// candidates are compared by cross-multiplication so ties are exact.
int exhaustive_otsu(const std::array<long long, 256>& hist) {
  long long total = 0;
  long long sum = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    sum += i * hist[i];
  }
  int best = -1;
  __int128 best_num = 0;
  __int128 best_den = 1;
  long long n0 = 0;
  long long s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += t * hist[t];
    const long long n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const __int128 diff = static_cast<__int128>(total) * s0 - static_cast<__int128>(n0) * sum;
    const __int128 num = diff * diff;
    const __int128 den = static_cast<__int128>(n0) * n1;
    if (best < 0 || num * best_den > best_num * den) {
      best = t;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

GrayImage from_histogram(const std::array<long long, 256>& hist, int width) {
  std::vector<std::uint8_t> data;
  for (int i = 0; i < 256; ++i) data.insert(data.end(), static_cast<std::size_t>(hist[i]), static_cast<std::uint8_t>(i));
  while (data.size() % width) data.push_back(data.back());
  const int height = static_cast<int>(data.size() / width);
  return GrayImage(width, height, std::move(data));
}

std::array<long long, 256> histogram(const GrayImage& img) {
  std::array<long long, 256> h{};
  for (auto v : img.data()) ++h[v];
  return h;
}

bool brute_contour_pixel(const BinaryImage& b, int r, int c) {
  if (!b.ink(r, c)) return false;
  const int dr[] = {-1, 1, 0, 0};
  const int dc[] = {0, 0, -1, 1};
  for (int i = 0; i < 4; ++i) {
    const int rr = r + dr[i];
    const int cc = c + dc[i];
    if (rr < 0 || cc < 0 || rr >= b.height() || cc >= b.width()) return true;
    if (!b.ink(rr, cc)) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("otsu: two spikes pick the smallest maximizing threshold") {
  std::array<long long, 256> h{};
  h[0] = 50;
  h[200] = 50;
  const auto img = from_histogram(h, 10);
  const int t = otsu_threshold(img);
  CHECK(t >= 0);
  CHECK(t <= 199);
  CHECK(t == exhaustive_otsu(h));
  CHECK(t == 0);
  const auto bin = binarize(img, t);
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c) CHECK(bin.ink(r, c) == (img.at(r, c) == 0));
}

TEST_CASE("otsu: constant image is degenerate") {
  GrayImage img(8, 8, 128);
  CHECK_THROWS_AS(otsu_threshold(img), DegenerateHistogramError);
}

TEST_CASE("otsu: bimodal 40/220 with 10% ink separates every ink pixel") {
  std::array<long long, 256> h{};
  h[40] = 100;
  h[220] = 900;
  const auto img = from_histogram(h, 50);
  const int t = otsu_threshold(img);
  CHECK(t == exhaustive_otsu(h));
  const auto bin = binarize(img, t);
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c) CHECK(bin.ink(r, c) == (img.at(r, c) == 40));
}

TEST_CASE("otsu property: matches exhaustive search on random histograms") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::array<long long, 256> h{};
    const int modes = uniform_int(rng, 1, 4);
    const int spread = uniform_int(rng, 0, 40);
    const int count = uniform_int(rng, 20, 3000);
    for (int i = 0; i < count; ++i) {
      const int center = uniform_int(rng, 0, modes - 1) * 255 / std::max(1, modes - 1);
      h[std::clamp(center + uniform_int(rng, -spread, spread), 0, 255)]++;
    }
    if (trial % 7 == 0) h[uniform_int(rng, 0, 255)] += 1;
    int distinct = 0;
    for (auto v : h) distinct += v > 0;
    const auto img = from_histogram(h, 16);
    if (distinct < 2) {
      CHECK_THROWS_AS(otsu_threshold(img), DegenerateHistogramError);
      continue;
    }
    CHECK(otsu_threshold(img) == exhaustive_otsu(histogram(img)));
  }
}

TEST_CASE("binarize: polarity flag") {
  GrayImage img(2, 1, std::vector<std::uint8_t>{10, 250});
  CHECK(binarize(img, 100).ink(0, 0));
  CHECK_FALSE(binarize(img, 100).ink(0, 1));
  CHECK_FALSE(binarize(img, 100, true).ink(0, 0));
  CHECK(binarize(img, 100, true).ink(0, 1));
  CHECK(binarize(img, 10).ink(0, 0));  // equality counts as ink
}

TEST_CASE("contour: blank page, single pixel, filled square") {
  BinaryImage blank(20, 20);
  CHECK(extract_contour(blank).empty());

  BinaryImage single(20, 20);
  single.set(7, 9, true);
  const auto one = extract_contour(single);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == Pixel{7, 9});

  BinaryImage square(20, 20);
  for (int r = 5; r < 10; ++r)
    for (int c = 5; c < 10; ++c) square.set(r, c, true);
  const auto contour = extract_contour(square);
  CHECK(contour.size() == 16);
  for (const auto& p : contour) CHECK((p.row == 5 || p.row == 9 || p.col == 5 || p.col == 9));
}

TEST_CASE("contour: ink on the image border is contour") {
  BinaryImage full(4, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) full.set(r, c, true);
  // Only (1,1) and (1,2) are interior.
  CHECK(extract_contour(full).size() == 10);
}

TEST_CASE("contour property: equals brute force, row-major, subset of ink") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int w = uniform_int(rng, 1, 40);
    const int h = uniform_int(rng, 1, 40);
    const double density = writerid::testing::uniform(rng, 0.0, 1.0);
    BinaryImage b(w, h);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) b.set(r, c, writerid::testing::uniform(rng, 0.0, 1.0) < density);
    std::vector<Pixel> expected;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (brute_contour_pixel(b, r, c)) expected.push_back({r, c});
    const auto got = extract_contour(b);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == expected[i]);
      CHECK(b.ink(got[i].row, got[i].col));
    }
  }
}

TEST_CASE("sample_patches: border skip and window placement") {
  std::vector<std::uint8_t> data(100 * 100);
  for (int i = 0; i < 100 * 100; ++i) data[i] = static_cast<std::uint8_t>((i * 37) % 256);
  GrayImage img(100, 100, data);

  const std::vector<Pixel> near_corner{{5, 5}};
  CHECK(sample_patches(img, near_corner, {}).empty());

  const std::vector<Pixel> center{{50, 50}};
  const auto patches = sample_patches(img, center, {}, "doc");
  REQUIRE(patches.size() == 1);
  CHECK(patches[0].center == Pixel{50, 50});
  CHECK(patches[0].source_doc == "doc");
  CHECK(patches[0].pixels.size() == 1024);
  // Rows 34..65 and cols 34..65.
  CHECK(patches[0].pixels[0] == doctest::Approx(img.at(34, 34) / 255.0));
  CHECK(patches[0].pixels[1023] == doctest::Approx(img.at(65, 65) / 255.0));
  CHECK(patches[0].pixels[31] == doctest::Approx(img.at(34, 65) / 255.0));

  // Exactly at the limits: r-16 >= 0 and r+15 <= 99.
  const std::vector<Pixel> edges{{16, 16}, {84, 84}, {15, 50}, {85, 50}, {50, 15}, {50, 85}};
  const auto kept = sample_patches(img, edges, {});
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].center == Pixel{16, 16});
  CHECK(kept[1].center == Pixel{84, 84});
}

TEST_CASE("sample_patches: 1000 eligible points, stride 2, cap 100") {
  GrayImage img(200, 200, 128);
  std::vector<Pixel> contour;
  for (int r = 20; r < 180 && contour.size() < 1000; ++r)
    for (int c = 20; c < 180 && contour.size() < 1000; c += 4) contour.push_back({r, c});
  REQUIRE(contour.size() == 1000);
  SamplingParams params{2, 100, 99};
  const auto a = sample_patches(img, contour, params);
  const auto b = sample_patches(img, contour, params);
  REQUIRE(a.size() == 100);
  REQUIRE(b.size() == 100);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].center == b[i].center);

  // Drawn from the stride-2 subsequence, in contour order.
  std::set<std::pair<int, int>> strided;
  for (std::size_t i = 0; i < contour.size(); i += 2) strided.insert({contour[i].row, contour[i].col});
  for (const auto& p : a) CHECK(strided.count({p.center.row, p.center.col}) == 1);
  for (std::size_t i = 1; i < a.size(); ++i) {
    CHECK(std::make_pair(a[i - 1].center.row, a[i - 1].center.col) <
          std::make_pair(a[i].center.row, a[i].center.col));
  }

  params.seed = 100;
  const auto c = sample_patches(img, contour, params);
  bool differs = false;
  for (std::size_t i = 0; i < c.size(); ++i) differs = differs || !(c[i].center == a[i].center);
  CHECK(differs);

  params.max_patches = 0;
  CHECK(sample_patches(img, contour, params).size() == 500);
}

TEST_CASE("sample_patches property: values in [0,1], centers on the contour") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = uniform_int(rng, 20, 90);
    const int h = uniform_int(rng, 20, 90);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h);
    for (auto& v : data) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
    GrayImage img(w, h, data);
    const auto bin = binarize(img, 100);
    const auto contour = extract_contour(bin);
    SamplingParams params{uniform_int(rng, 1, 4), static_cast<std::size_t>(uniform_int(rng, 0, 30)),
                          static_cast<std::uint64_t>(trial)};
    const auto patches = sample_patches(img, contour, params);
    if (params.max_patches) CHECK(patches.size() <= params.max_patches);
    for (const auto& p : patches) {
      CHECK(bin.ink(p.center.row, p.center.col));
      CHECK(brute_contour_pixel(bin, p.center.row, p.center.col));
      for (float v : p.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }
}

TEST_CASE("sample_patches: stride must be positive") {
  GrayImage img(40, 40, 0);
  std::vector<Pixel> contour{{20, 20}};
  CHECK_THROWS_AS(sample_patches(img, contour, {0, 0, 0}), ConfigError);
}

TEST_CASE("luma: rounded weighted sum") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const int r = uniform_int(rng, 0, 255);
    const int g = uniform_int(rng, 0, 255);
    const int b = uniform_int(rng, 0, 255);
    const double exact = 0.299 * r + 0.587 * g + 0.114 * b;
    if (std::abs(exact - std::floor(exact) - 0.5) < 1e-6) continue;
    CHECK(luma(r, g, b) == std::lround(exact));
  }
  CHECK(luma(255, 255, 255) == 255);
  CHECK(luma(0, 0, 0) == 0);
}

TEST_CASE("image io: PNG round trip, PGM binary and ascii") {
  const auto dir = writerid::testing::scratch_dir("imaging_io");
  std::vector<std::uint8_t> data(7 * 5);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 7);
  GrayImage img(7, 5, data);
  save_png(img, dir / "a.png");
  const auto back = load_image(dir / "a.png");
  REQUIRE(back.width() == 7);
  REQUIRE(back.height() == 5);
  CHECK(std::equal(back.data().begin(), back.data().end(), data.begin()));

  {
    std::ofstream pgm(dir / "b.pgm", std::ios::binary);
    pgm << "P5\n# comment\n3 2\n255\n";
    pgm.write("\x01\x02\x03\x04\x05\x06", 6);
  }
  const auto p5 = load_image(dir / "b.pgm");
  CHECK(p5.width() == 3);
  CHECK(p5.at(1, 2) == 6);

  io::write_file_atomic(dir / "c.pgm", "P2\n2 2\n15\n0 15\n5 10\n");
  const auto p2 = load_image(dir / "c.pgm");
  CHECK(p2.at(0, 1) == 255);
  CHECK(p2.at(1, 0) == 85);

  io::write_file_atomic(dir / "bad.png", "not an image");
  CHECK_THROWS_AS(load_image(dir / "bad.png"), FormatError);

  BinaryImage bin(3, 3);
  bin.set(1, 1, true);
  save_png(bin, dir / "bin.png");
  const auto restored = binary_from_rendering(load_image(dir / "bin.png"));
  CHECK(restored.ink(1, 1));
  CHECK_FALSE(restored.ink(0, 0));
}
