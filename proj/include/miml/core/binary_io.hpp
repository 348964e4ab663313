// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "miml/core/errors.hpp"

namespace miml::io {

/// Appends little-endian encodings to a byte buffer, independent of host order.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v);
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  /// u16 length prefix followed by the bytes.
  void short_string(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked cursor over a byte buffer. Every read names the field it is
/// decoding so truncation errors say where the file ended.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8(std::string_view field) { return static_cast<std::uint8_t>(get(1, field)); }
  std::uint16_t u16(std::string_view field) { return static_cast<std::uint16_t>(get(2, field)); }
  std::uint32_t u32(std::string_view field) { return static_cast<std::uint32_t>(get(4, field)); }
  std::uint64_t u64(std::string_view field) { return get(8, field); }
  double f64(std::string_view field);
  std::string short_string(std::string_view field);
  std::span<const std::uint8_t> raw(std::size_t n, std::string_view field);
  void expect_magic(std::string_view magic);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void require(std::size_t n, std::string_view field);
  std::uint64_t get(int n, std::string_view field);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place, so a
/// reader never observes a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace miml::io
