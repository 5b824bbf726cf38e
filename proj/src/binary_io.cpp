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

#include "writerid/binary_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <unistd.h>

namespace writerid::io {
namespace {

template <typename T>
void append_le(std::string& out, T value) {
  std::array<char, sizeof(T)> raw;
  std::memcpy(raw.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw.begin(), raw.end());
  }
  out.append(raw.data(), raw.size());
}

template <typename T>
T parse_le(const char* p) {
  std::array<char, sizeof(T)> raw;
  std::memcpy(raw.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw.begin(), raw.end());
  }
  T value;
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

}  // namespace

void BinaryWriter::magic(std::string_view tag) {
  if (tag.size() != 4) throw ConfigError("magic must be four bytes: " + std::string(tag));
  buffer_.append(tag);
}

void BinaryWriter::u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
void BinaryWriter::u32(std::uint32_t v) { append_le(buffer_, v); }
void BinaryWriter::i32(std::int32_t v) { append_le(buffer_, v); }
void BinaryWriter::f32(double v) { append_le(buffer_, static_cast<float>(v)); }

void BinaryWriter::f32_array(std::span<const double> values) {
  buffer_.reserve(buffer_.size() + values.size() * 4);
  for (double v : values) f32(v);
}

void BinaryWriter::bytes(std::span<const std::uint8_t> values) {
  buffer_.append(reinterpret_cast<const char*>(values.data()), values.size());
}

void BinaryWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buffer_.append(s);
}

BinaryReader::BinaryReader(std::string data, std::string source)
    : data_(std::move(data)), source_(std::move(source)) {}

void BinaryReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw FormatError(source_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ")");
  }
}

void BinaryReader::expect_magic(std::string_view tag) {
  need(tag.size());
  std::string_view got(data_.data() + pos_, tag.size());
  if (got != tag) {
    throw FormatError(source_ + ": bad magic, expected '" + std::string(tag) + "'");
  }
  pos_ += tag.size();
}

std::uint8_t BinaryReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t BinaryReader::u32() {
  need(4);
  auto v = parse_le<std::uint32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::int32_t BinaryReader::i32() {
  need(4);
  auto v = parse_le<std::int32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

double BinaryReader::f32() {
  need(4);
  auto v = parse_le<float>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::vector<double> BinaryReader::f32_array(std::size_t count) {
  if (count > remaining() / 4) need(count * 4);
  std::vector<double> out(count);
  for (auto& v : out) v = f32();
  return out;
}

std::vector<std::uint8_t> BinaryReader::bytes(std::size_t count) {
  need(count);
  std::vector<std::uint8_t> out(count);
  std::memcpy(out.data(), data_.data() + pos_, count);
  pos_ += count;
  return out;
}

std::string BinaryReader::string() {
  const std::uint32_t n = u32();
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

void BinaryReader::expect_end() const {
  if (!at_end()) {
    throw FormatError(source_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace writerid::io
