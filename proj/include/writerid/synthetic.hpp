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

// Procedural "handwriting" for tests and demos. Every writer owns a stroke
// style; each document is a fresh page of random glyphs drawn in that style.

#ifndef WRITERID_SYNTHETIC_HPP_
#define WRITERID_SYNTHETIC_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "writerid/imaging.hpp"

namespace writerid::synthetic {

struct WriterStyle {
  double slant = 0.0;         // shear angle in radians, positive leans right
  double stroke_width = 2.5;  // pen diameter in pixels
  double curvature = 1.0;     // turning rate along a stroke, radians per glyph height
  double glyph_height = 18.0;  // pixels
  double aspect = 0.8;        // glyph width / height
  std::uint64_t alphabet_seed = 0;  // selects the writer's personal glyph shapes
};

// `count` styles spread over the style space by Latin hypercube sampling,
// each with its own glyph alphabet.
std::vector<WriterStyle> sample_styles(std::size_t count, std::uint64_t seed);

struct PageLayout {
  int width = 256;
  int height = 256;
  int margin = 18;
};

// Renders one page; `seed` picks which of the writer's glyphs appear and
// jitters the style slightly.
imaging::GrayImage render_document(const WriterStyle& style, const PageLayout& layout, std::uint64_t seed);

// Oriented bars at 0/45/90/135 degrees plus pixel noise, labelled 0..3.
struct BarSample {
  imaging::Patch patch;
  int label = 0;
};
std::vector<BarSample> oriented_bars(std::size_t count, std::uint64_t seed);

struct DatasetSpec {
  std::size_t writers = 20;
  std::size_t docs_per_writer = 4;
  std::string writer_prefix = "w";
  PageLayout layout;
  std::uint64_t seed = 0;
};

// Writes `<writer>_<doc>.png` files under `dir/images` and a manifest
// (`dir/<manifest_name>`) with one relative image path per line, parseable
// with the `{writer}_{doc}` pattern. Returns the manifest path.
std::filesystem::path write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                    const std::string& manifest_name);

}  // namespace writerid::synthetic

#endif  // WRITERID_SYNTHETIC_HPP_
