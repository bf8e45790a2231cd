#pragma once

// Little-endian byte encoding shared by the checkpoint, index and dataset
// file formats. Reads are bounds-checked and report the failing offset.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "semicon/error.hpp"

namespace semicon {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<char>& data() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
      fail("magic", "expected \"" + std::string(magic) + "\"");
    }
    pos_ += magic.size();
  }

  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* field) { return static_cast<std::uint8_t>(get(1, field)); }
  std::uint16_t u16(const char* field) { return static_cast<std::uint16_t>(get(2, field)); }
  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(get(4, field)); }
  std::uint64_t u64(const char* field) { return get(8, field); }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }

  /// Throws a FormatError naming the field and the offset where it starts.
  [[noreturn]] void fail(const char* field, const std::string& msg) const { fail_at(start_, field, msg); }
  [[noreturn]] void fail_at(std::size_t offset, const char* field, const std::string& msg) const {
    throw FormatError(what_ + ": field '" + field + "' at offset " + std::to_string(offset) + ": " + msg);
  }

  void need(std::size_t n, const char* field) {
    start_ = pos_;
    if (remaining() < n) {
      fail(field, "truncated (need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left)");
    }
  }

 private:
  std::uint64_t get(int n, const char* field) {
    need(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::vector<char>& data_;
  std::string what_;
  std::size_t pos_ = 0;
  std::size_t start_ = 0;  // first byte of the field read last
};

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<char>& data);

}  // namespace semicon
