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

// Little-endian binary encoding shared by every on-disk artifact.
//
// All artifacts start with a four byte ASCII magic. Integers are unsigned
// 32-bit unless noted, reals are IEEE-754 binary32, strings are a u32 byte
// count followed by the raw bytes. Readers reject a wrong magic, truncated
// payloads and trailing garbage with FormatError.

#ifndef WRITERID_BINARY_IO_HPP_
#define WRITERID_BINARY_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "writerid/common.hpp"

namespace writerid::io {

class BinaryWriter {
 public:
  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void f32(double v);
  void f32_array(std::span<const double> values);
  void bytes(std::span<const std::uint8_t> values);
  void string(std::string_view s);

  const std::string& buffer() const { return buffer_; }

 private:
  std::string buffer_;
};

class BinaryReader {
 public:
  // `source` names the artifact in error messages.
  BinaryReader(std::string data, std::string source);

  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  std::int32_t i32();
  double f32();
  std::vector<double> f32_array(std::size_t count);
  std::vector<std::uint8_t> bytes(std::size_t count);
  std::string string();

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`. Parent
// directories are created as needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace writerid::io

#endif  // WRITERID_BINARY_IO_HPP_
