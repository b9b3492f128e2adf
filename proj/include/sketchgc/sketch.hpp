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

// Linear sketches of gradient vectors.
//
//  * CountMinArray   single bucket array; insert is A^T g and the query
//                    returns the bucket SUM, g_hat = A A^T g. (The classic
//                    min-over-rows query is not provided.)
//  * CountSketchTable r x c signed table; query is the median over rows of
//                    s_j(i) * S[j][h_j(i)].
//  * AveragedSketch  bucket sums plus occupancy counts; the stored value of a
//                    bucket is the mean of everything hashed into it,
//                    i.e. diag((A^T A)^-1) A^T g.
//
// All three are linear in the inserted values, so sketches built with the
// same hashing parameters merge by element-wise addition.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sketchgc/core.hpp"
#include "sketchgc/wire.hpp"

namespace sketchgc {

// ---------------------------------------------------------------------------

class CountMinArray {
 public:
  CountMinArray(std::size_t dim, std::size_t buckets, std::uint64_t seed)
      : mapping_(seed, buckets, HashKind::bucket_only), dim_(dim), buckets_(buckets, 0.0) {}

  void insert(std::span<const double> g) {
    require_same_dim(g.size(), dim_, "CountMinArray::insert");
    for (std::size_t i = 0; i < g.size(); ++i) buckets_[mapping_.bucket(i)] += g[i];
  }

  /// g_hat(i) = buckets[h(i)].
  Vector query() const {
    Vector out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = buckets_[mapping_.bucket(i)];
    return out;
  }

  const HashMapping& mapping() const noexcept { return mapping_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> buckets() const noexcept { return buckets_; }
  std::span<double> buckets() noexcept { return buckets_; }

  friend bool operator==(const CountMinArray&, const CountMinArray&) = default;

 private:
  HashMapping mapping_;
  std::size_t dim_;
  Vector buckets_;
};

inline CountMinArray cm_insert(CountMinArray sk, std::span<const double> g) {
  sk.insert(g);
  return sk;
}

inline Vector cm_query(const CountMinArray& sk) { return sk.query(); }

// ---------------------------------------------------------------------------

class CountSketchTable {
 public:
  CountSketchTable(std::size_t dim, std::size_t rows, std::size_t cols, std::uint64_t seed)
      : dim_(dim), rows_(rows), cols_(cols), seed_(seed), table_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) throw ConfigError("CountSketchTable: rows and cols must be >= 1");
    row_maps_.reserve(rows);
    for (std::size_t j = 0; j < rows; ++j) {
      row_maps_.emplace_back(derive_seed(seed, j), cols, HashKind::bucket_and_sign);
    }
  }

  void insert(std::size_t index, double value) {
    check_index(index);
    if (value == 0.0) return;
    for (std::size_t j = 0; j < rows_; ++j) {
      const auto& h = row_maps_[j];
      table_[j * cols_ + h.bucket(index)] += h.sign(index) * value;
    }
  }

  /// Median over rows of the sign-corrected bucket values. For even row
  /// counts the lower median (sorted position (r-1)/2) is returned.
  double query(std::size_t index) const {
    check_index(index);
    if (rows_ == 1) return estimate(0, index);
    std::vector<double> est(rows_);
    for (std::size_t j = 0; j < rows_; ++j) est[j] = estimate(j, index);
    const auto mid = est.begin() + static_cast<std::ptrdiff_t>((rows_ - 1) / 2);
    std::nth_element(est.begin(), mid, est.end());
    return *mid;
  }

  double estimate(std::size_t row, std::size_t index) const {
    const auto& h = row_maps_[row];
    return h.sign(index) * table_[row * cols_ + h.bucket(index)];
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const HashMapping& row_mapping(std::size_t j) const { return row_maps_.at(j); }

  /// Row-major r x c cells.
  std::span<const double> table() const noexcept { return table_; }
  std::span<double> table() noexcept { return table_; }

  bool compatible_with(const CountSketchTable& o) const noexcept {
    return dim_ == o.dim_ && rows_ == o.rows_ && cols_ == o.cols_ && seed_ == o.seed_;
  }

  friend bool operator==(const CountSketchTable& a, const CountSketchTable& b) {
    return a.compatible_with(b) && a.table_ == b.table_;
  }

 private:
  void check_index(std::size_t index) const {
    if (index >= dim_) {
      throw DimensionError("CountSketchTable: index " + std::to_string(index) +
                           " out of range for dim " + std::to_string(dim_));
    }
  }

  std::size_t dim_;
  std::size_t rows_;
  std::size_t cols_;
  std::uint64_t seed_;
  std::vector<HashMapping> row_maps_;
  Vector table_;
};

inline CountSketchTable cs_insert(CountSketchTable sk, std::size_t index, double value) {
  sk.insert(index, value);
  return sk;
}

inline double cs_query(const CountSketchTable& sk, std::size_t index) { return sk.query(index); }

// ---------------------------------------------------------------------------

class AveragedSketch {
 public:
  AveragedSketch(std::size_t dim, std::size_t buckets, std::uint64_t seed)
      : mapping_(seed, buckets, HashKind::bucket_only),
        dim_(dim),
        sums_(buckets, 0.0),
        counts_(buckets, 0) {}

  /// Inserts (index, value) pairs. Indices must be unique within the call.
  void insert(std::span<const std::pair<std::size_t, double>> subset) {
    std::vector<std::size_t> idx;
    idx.reserve(subset.size());
    for (const auto& [i, v] : subset) {
      if (i >= dim_) throw DimensionError("AveragedSketch: index out of range");
      idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end());
    if (std::adjacent_find(idx.begin(), idx.end()) != idx.end()) {
      throw InputError("AveragedSketch: duplicate index in inserted subset");
    }
    for (const auto& [i, v] : subset) add(i, v);
  }

  /// Unchecked single insertion; callers guarantee each index is added once.
  void add(std::size_t index, double value) {
    const std::size_t b = mapping_.bucket(index);
    sums_[b] += value;
    counts_[b] += 1;
  }

  /// Bucket mean; empty buckets report 0.
  double mean(std::size_t bucket) const {
    return counts_[bucket] == 0 ? 0.0 : sums_[bucket] / static_cast<double>(counts_[bucket]);
  }

  Vector means() const {
    Vector out(sums_.size());
    for (std::size_t b = 0; b < sums_.size(); ++b) out[b] = mean(b);
    return out;
  }

  double query(std::size_t index) const { return mean(mapping_.bucket(index)); }

  const HashMapping& mapping() const noexcept { return mapping_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t buckets() const noexcept { return sums_.size(); }
  std::span<const double> sums() const noexcept { return sums_; }
  std::span<double> sums() noexcept { return sums_; }
  std::span<const std::uint64_t> counts() const noexcept { return counts_; }
  std::span<std::uint64_t> counts() noexcept { return counts_; }

  friend bool operator==(const AveragedSketch&, const AveragedSketch&) = default;

 private:
  HashMapping mapping_;
  std::size_t dim_;
  Vector sums_;
  std::vector<std::uint64_t> counts_;
};

inline AveragedSketch avg_insert(AveragedSketch sk,
                                 std::span<const std::pair<std::size_t, double>> subset) {
  sk.insert(subset);
  return sk;
}

// ---------------------------------------------------------------------------
// Merge

namespace detail {
inline void require_compatible(bool ok, const std::string& what) {
  if (!ok) throw IncompatibleError("sketch_merge: incompatible " + what);
}
}  // namespace detail

inline CountMinArray sketch_merge(const CountMinArray& a, const CountMinArray& b) {
  detail::require_compatible(a.dim() == b.dim(), "dim");
  detail::require_compatible(a.mapping() == b.mapping(), "hash mapping (seed, m)");
  CountMinArray out = a;
  for (std::size_t j = 0; j < out.buckets().size(); ++j) out.buckets()[j] += b.buckets()[j];
  return out;
}

inline CountSketchTable sketch_merge(const CountSketchTable& a, const CountSketchTable& b) {
  detail::require_compatible(a.compatible_with(b), "(seed, r, c, dim)");
  CountSketchTable out = a;
  for (std::size_t j = 0; j < out.table().size(); ++j) out.table()[j] += b.table()[j];
  return out;
}

inline AveragedSketch sketch_merge(const AveragedSketch& a, const AveragedSketch& b) {
  detail::require_compatible(a.dim() == b.dim(), "dim");
  detail::require_compatible(a.mapping() == b.mapping(), "hash mapping (seed, m)");
  AveragedSketch out = a;
  for (std::size_t j = 0; j < out.buckets(); ++j) {
    out.sums()[j] += b.sums()[j];
    out.counts()[j] += b.counts()[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: "SKCH", version, kind, then little-endian u64 header fields,
// f32 cell values, and (averaged sketches only) u32 occupancy counts.

enum class SketchKind : std::uint8_t { count_min = 1, count_sketch = 2, averaged = 3 };

inline constexpr std::uint8_t kSketchWireVersion = 1;

inline wire::Bytes serialize(const CountMinArray& sk) {
  wire::Writer w;
  w.magic("SKCH");
  w.u8(kSketchWireVersion);
  w.u8(static_cast<std::uint8_t>(SketchKind::count_min));
  w.u64(sk.dim());
  w.u64(sk.mapping().buckets);
  w.u64(sk.mapping().seed);
  for (double v : sk.buckets()) w.f32(static_cast<float>(v));
  return std::move(w).take();
}

inline wire::Bytes serialize(const CountSketchTable& sk) {
  wire::Writer w;
  w.magic("SKCH");
  w.u8(kSketchWireVersion);
  w.u8(static_cast<std::uint8_t>(SketchKind::count_sketch));
  w.u64(sk.dim());
  w.u64(sk.rows());
  w.u64(sk.cols());
  w.u64(sk.seed());
  for (double v : sk.table()) w.f32(static_cast<float>(v));
  return std::move(w).take();
}

/// Averaged sketches ship bucket means, not sums.
inline wire::Bytes serialize(const AveragedSketch& sk) {
  wire::Writer w;
  w.magic("SKCH");
  w.u8(kSketchWireVersion);
  w.u8(static_cast<std::uint8_t>(SketchKind::averaged));
  w.u64(sk.dim());
  w.u64(sk.buckets());
  w.u64(sk.mapping().seed);
  for (std::size_t b = 0; b < sk.buckets(); ++b) w.f32(static_cast<float>(sk.mean(b)));
  for (auto c : sk.counts()) w.u32(static_cast<std::uint32_t>(c));
  return std::move(w).take();
}

namespace detail {
inline SketchKind read_sketch_header(wire::Reader& r) {
  r.expect_magic("SKCH");
  if (r.u8() != kSketchWireVersion) throw FormatError("SKCH: unsupported version");
  const auto kind = r.u8();
  if (kind < 1 || kind > 3) throw FormatError("SKCH: unknown sketch kind");
  return static_cast<SketchKind>(kind);
}

inline void expect_kind(SketchKind got, SketchKind want) {
  if (got != want) throw FormatError("SKCH: unexpected sketch kind");
}
}  // namespace detail

inline CountMinArray deserialize_count_min(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  detail::expect_kind(detail::read_sketch_header(r), SketchKind::count_min);
  const auto dim = r.u64();
  const auto m = r.u64();
  const auto seed = r.u64();
  if (m == 0 || r.remaining() != 4 * m) throw FormatError("SKCH: bucket array size mismatch");
  CountMinArray sk(dim, m, seed);
  for (auto& v : sk.buckets()) v = r.f32();
  r.expect_end();
  return sk;
}

inline CountSketchTable deserialize_count_sketch(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  detail::expect_kind(detail::read_sketch_header(r), SketchKind::count_sketch);
  const auto dim = r.u64();
  const auto rows = r.u64();
  const auto cols = r.u64();
  const auto seed = r.u64();
  if (rows == 0 || cols == 0 || r.remaining() != 4 * rows * cols) {
    throw FormatError("SKCH: table size mismatch");
  }
  CountSketchTable sk(dim, rows, cols, seed);
  for (auto& v : sk.table()) v = r.f32();
  r.expect_end();
  return sk;
}

inline AveragedSketch deserialize_averaged(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  detail::expect_kind(detail::read_sketch_header(r), SketchKind::averaged);
  const auto dim = r.u64();
  const auto m = r.u64();
  const auto seed = r.u64();
  if (m == 0 || r.remaining() != 8 * m) throw FormatError("SKCH: bucket array size mismatch");
  AveragedSketch sk(dim, m, seed);
  std::vector<float> means(m);
  for (auto& v : means) v = r.f32();
  for (std::size_t b = 0; b < m; ++b) {
    const auto c = r.u32();
    sk.counts()[b] = c;
    sk.sums()[b] = static_cast<double>(means[b]) * static_cast<double>(c);
  }
  r.expect_end();
  return sk;
}

}  // namespace sketchgc
