// Copyright 2026 The sketchgc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

// Little-endian byte and bit packing shared by the payload formats.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sketchgc/error.hpp"

namespace sketchgc::wire {

using Bytes = std::vector<std::uint8_t>;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void magic(std::string_view tag) {
    for (char c : tag) out_.push_back(static_cast<std::uint8_t>(c));
  }

  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

  Bytes take() && { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  void expect_magic(std::string_view tag) {
    need(tag.size());
    for (char c : tag) {
      if (in_[pos_++] != static_cast<std::uint8_t>(c)) {
        throw FormatError("bad magic, expected \"" + std::string(tag) + "\"");
      }
    }
  }

  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const noexcept { return in_.size() - pos_; }

  void expect_end() const {
    if (remaining() != 0) throw FormatError("trailing bytes after payload");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("truncated payload");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

/// Number of bits needed to store values in [0, count): ceil(log2(count)).
constexpr unsigned bits_for(std::uint64_t count) noexcept {
  return count <= 1 ? 0u : static_cast<unsigned>(std::bit_width(count - 1));
}

/// Packs codes of `width` bits each, least-significant bit first within
/// each byte. Output is padded to a whole number of bytes.
inline Bytes pack_bits(std::span<const std::uint32_t> codes, unsigned width) {
  Bytes out((codes.size() * width + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint32_t code : codes) {
    for (unsigned b = 0; b < width; ++b, ++bit) {
      if ((code >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return out;
}

inline std::vector<std::uint32_t> unpack_bits(std::span<const std::uint8_t> in, std::size_t count,
                                              unsigned width) {
  if (in.size() * 8 < count * width) throw FormatError("bit-packed field too short");
  std::vector<std::uint32_t> codes(count, 0);
  std::size_t bit = 0;
  for (auto& code : codes) {
    for (unsigned b = 0; b < width; ++b, ++bit) {
      if ((in[bit / 8] >> (bit % 8)) & 1u) code |= 1u << b;
    }
  }
  return codes;
}

}  // namespace sketchgc::wire
