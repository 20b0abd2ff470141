// SPDX-License-Identifier: MIT
#pragma once

// Minimal binary encoding used by checkpoints plus the FNV-1a hash used to
// fingerprint configurations and parameter blocks.  Fixed little-endian
// layout so files are stable across compilers on the same platform family.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "tube/errors.hpp"

namespace tube {

inline std::uint64_t fnv1a_64(std::string_view bytes,
                              std::uint64_t h = 14695981039346656037ULL) {
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

class BinaryWriter {
 public:
  void put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
  }
  void put_i64(std::int64_t v) { put_u64(static_cast<std::uint64_t>(v)); }
  void put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(std::string_view s) {
    put_u64(s.size());
    buf_.append(s);
  }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t take_u64() {
    if (pos_ + 8 > bytes_.size()) {
      throw CorruptCheckpoint("binary payload is truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  std::int64_t take_i64() { return static_cast<std::int64_t>(take_u64()); }
  double take_f64() { return std::bit_cast<double>(take_u64()); }
  std::string_view take_bytes() {
    const std::uint64_t n = take_u64();
    if (pos_ + n > bytes_.size()) {
      throw CorruptCheckpoint("binary payload is truncated");
    }
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace tube
