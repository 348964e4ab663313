// SPDX-License-Identifier: Apache-2.0
#include "miml/core/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

namespace miml::io {

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::short_string(std::string_view s) {
  if (s.size() > 0xffff) throw ContractError("string too long for u16 length prefix: " + std::string(s.substr(0, 32)));
  u16(static_cast<std::uint16_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteReader::require(std::size_t n, std::string_view field) {
  if (remaining() < n) {
    throw FormatError(std::string(field), "truncated data while reading '" + std::string(field) + "' (need " +
                                              std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                                              " left)");
  }
}

std::uint64_t ByteReader::get(int n, std::string_view field) {
  require(static_cast<std::size_t>(n), field);
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

double ByteReader::f64(std::string_view field) { return std::bit_cast<double>(u64(field)); }

std::string ByteReader::short_string(std::string_view field) {
  const std::size_t n = u16(field);
  auto bytes = raw(n, field);
  return std::string(bytes.begin(), bytes.end());
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n, std::string_view field) {
  require(n, field);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::expect_magic(std::string_view magic) {
  if (remaining() < magic.size() || std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
    throw FormatError("magic", "bad magic bytes: expected '" + std::string(magic) + "'");
  }
  pos_ += magic.size();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  if (path.empty()) throw FileNotFoundError("file not found: empty path");
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw FileNotFoundError("file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.empty()) throw IoError("cannot write: empty path");
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move file into place: " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace miml::io
