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

// Sparse-sketch reducer: block-wise Top-K selection, a one-bit-per-block
// bitmap of the selected blocks, and a signed count-sketch of the selected
// values. Payloads merge by OR on the bitmap and addition on the table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sketchgc/core.hpp"
#include "sketchgc/sketch.hpp"
#include "sketchgc/wire.hpp"

namespace sketchgc {

struct BlockMask {
  BlockPartition partition;
  std::vector<std::uint8_t> flags;  // one 0/1 flag per block

  BlockMask() = default;
  explicit BlockMask(BlockPartition p) : partition(p), flags(p.num_blocks(), 0) {}

  static BlockMask all(BlockPartition p) {
    BlockMask m(p);
    std::fill(m.flags.begin(), m.flags.end(), 1);
    return m;
  }

  std::size_t popcount() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
  }

  bool selected_block(std::size_t block) const { return flags[block] != 0; }
  bool covers(std::size_t index) const { return flags[partition.block_of(index)] != 0; }

  /// Number of indices inside selected blocks.
  std::size_t covered() const {
    std::size_t n = 0;
    for (std::size_t b = 0; b < flags.size(); ++b) {
      if (flags[b]) n += partition.end(b) - partition.begin(b);
    }
    return n;
  }

  friend bool operator==(const BlockMask&, const BlockMask&) = default;
};

inline BlockMask mask_or(const BlockMask& a, const BlockMask& b) {
  if (!(a.partition == b.partition)) throw IncompatibleError("BlockMask: mismatched partition");
  BlockMask out = a;
  for (std::size_t i = 0; i < out.flags.size(); ++i) out.flags[i] |= b.flags[i];
  return out;
}

inline Vector block_norms_sq(std::span<const double> g, const BlockPartition& p) {
  Vector norms(p.num_blocks(), 0.0);
  for (std::size_t b = 0; b < p.num_blocks(); ++b) {
    for (std::size_t i = p.begin(b); i < p.end(b); ++i) norms[b] += g[i] * g[i];
  }
  return norms;
}

/// Flags the K blocks of largest L2 norm; ties go to the lower block index.
inline BlockMask block_topk(std::span<const double> g, std::size_t num_blocks, std::size_t k) {
  require_finite(g);
  const BlockPartition p(g.size(), num_blocks);
  if (k < 1 || k > num_blocks) throw ConfigError("block_topk: need 1 <= K <= b");
  const Vector norms = block_norms_sq(g, p);
  std::vector<std::size_t> order(num_blocks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  BlockMask mask(p);
  for (std::size_t i = 0; i < k; ++i) mask.flags[order[i]] = 1;
  return mask;
}

/// g restricted to the selected blocks.
inline Vector sparsify(std::span<const double> g, const BlockMask& mask) {
  require_same_dim(g.size(), mask.partition.dim(), "sparsify");
  Vector out(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (mask.covers(i)) out[i] = g[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sizing

inline constexpr std::size_t kDefaultSketchRows = 3;
inline constexpr double kDefaultLambda = 0.5;

/// Columns per row for a total budget of lambda * alpha * d cells split over
/// `rows` rows, rounded up, at least one.
inline std::size_t sketch_columns(std::size_t dim, double alpha, double lambda,
                                  std::size_t rows = kDefaultSketchRows) {
  if (rows == 0) throw ConfigError("sketch_columns: rows must be >= 1");
  if (!(alpha > 0.0) || alpha > 1.0) throw ConfigError("sketch_columns: alpha must be in (0, 1]");
  if (!(lambda > 0.0)) throw ConfigError("sketch_columns: lambda must be > 0");
  const double cells = lambda * alpha * static_cast<double>(dim);
  // Guard against 0.5 * 0.05 * 1e6 / 3 landing a hair above an integer.
  const double per_row = cells / static_cast<double>(rows);
  const auto c = static_cast<std::size_t>(std::ceil(per_row - 1e-9));
  return std::max<std::size_t>(1, c);
}

struct SparseSketchConfig {
  std::size_t num_blocks = 64;   // b
  std::size_t topk_blocks = 8;   // K
  std::size_t rows = kDefaultSketchRows;
  double lambda = kDefaultLambda;
  std::uint64_t seed = 0;

  /// Nominal non-zero fraction K/b. Shared by all workers so their sketches
  /// have identical shapes.
  double alpha() const {
    return static_cast<double>(topk_blocks) / static_cast<double>(num_blocks);
  }

  std::size_t cols(std::size_t dim) const { return sketch_columns(dim, alpha(), lambda, rows); }
};

// ---------------------------------------------------------------------------
// Payload

struct SparsePayload {
  BlockMask mask;
  CountSketchTable sketch;

  /// Fraction of indices covered by the bitmap.
  double alpha() const {
    return static_cast<double>(mask.covered()) / static_cast<double>(mask.partition.dim());
  }

  /// Sketch cells per covered index, r*c / (alpha*d).
  double lambda() const {
    const auto covered = mask.covered();
    if (covered == 0) return 0.0;
    return static_cast<double>(sketch.rows() * sketch.cols()) / static_cast<double>(covered);
  }

  friend bool operator==(const SparsePayload&, const SparsePayload&) = default;
};

inline SparsePayload sparse_compress(std::span<const double> g, const BlockMask& mask,
                                     std::size_t rows, std::size_t cols, std::uint64_t seed) {
  require_finite(g);
  require_same_dim(g.size(), mask.partition.dim(), "sparse_compress");
  SparsePayload p{mask, CountSketchTable(g.size(), rows, cols, seed)};
  const auto& part = mask.partition;
  for (std::size_t b = 0; b < part.num_blocks(); ++b) {
    if (!mask.flags[b]) continue;
    for (std::size_t i = part.begin(b); i < part.end(b); ++i) p.sketch.insert(i, g[i]);
  }
  return p;
}

/// Block Top-K selection followed by compression.
inline SparsePayload sparse_compress(std::span<const double> g, const SparseSketchConfig& cfg) {
  return sparse_compress(g, block_topk(g, cfg.num_blocks, cfg.topk_blocks), cfg.rows,
                         cfg.cols(g.size()), cfg.seed);
}

inline SparsePayload sparse_merge(std::span<const SparsePayload> payloads) {
  if (payloads.empty()) throw ConfigError("sparse_merge: no payloads");
  SparsePayload out = payloads.front();
  for (std::size_t i = 1; i < payloads.size(); ++i) {
    out.mask = mask_or(out.mask, payloads[i].mask);
    out.sketch = sketch_merge(out.sketch, payloads[i].sketch);
  }
  return out;
}

/// cs_query(i) / W on every index of a selected block, zero elsewhere.
inline Vector sparse_decompress(const SparsePayload& p, std::size_t workers = 1) {
  if (workers == 0) throw ConfigError("sparse_decompress: workers must be >= 1");
  const auto& part = p.mask.partition;
  Vector out(part.dim(), 0.0);
  const double w = static_cast<double>(workers);
  for (std::size_t b = 0; b < part.num_blocks(); ++b) {
    if (!p.mask.flags[b]) continue;
    for (std::size_t i = part.begin(b); i < part.end(b); ++i) out[i] = p.sketch.query(i) / w;
  }
  return out;
}

struct TopkDelta {
  double ratio = 1.0;  // ||sparse(g)||^2 / ||g||^2
  double bound = 1.0;  // K / b
  bool holds = true;
};

inline TopkDelta topk_delta_check(std::span<const double> g, std::size_t num_blocks,
                                  std::size_t k) {
  const auto mask = block_topk(g, num_blocks, k);
  TopkDelta out;
  out.bound = static_cast<double>(k) / static_cast<double>(num_blocks);
  const double total = l2_norm_sq(g);
  if (total > 0.0) out.ratio = l2_norm_sq(sparsify(g, mask)) / total;
  out.holds = out.ratio >= out.bound;
  return out;
}

// ---------------------------------------------------------------------------
// Wire format and cost accounting
//
//   "S2SK" | version u8 | d u64 | b u64 | r u64 | c u64 | seed u64
//   | bitmap (ceil(b/8) bytes) | table f32[r*c] row-major

inline constexpr std::uint8_t kSparseWireVersion = 1;
inline constexpr std::uint64_t kSparseHeaderBits = 8 * (4 + 1 + 5 * 8);

inline std::uint64_t sparse_value_bits(std::size_t rows, std::size_t cols) {
  return 32ULL * rows * cols;
}

/// b + 32*r*c + header, before byte padding of the bitmap.
inline std::uint64_t sparse_comm_bits(std::size_t num_blocks, std::size_t rows,
                                      std::size_t cols) {
  return num_blocks + sparse_value_bits(rows, cols) + kSparseHeaderBits;
}

inline std::uint64_t sparse_comm_bits(const SparsePayload& p) {
  return sparse_comm_bits(p.mask.partition.num_blocks(), p.sketch.rows(), p.sketch.cols());
}

/// Coordinate-list baseline: a 32-bit value and a 32-bit index per non-zero.
inline std::uint64_t coordinate_format_bits(std::size_t nnz) { return 64ULL * nnz; }

inline wire::Bytes serialize(const SparsePayload& p) {
  const auto& part = p.mask.partition;
  wire::Writer w;
  w.magic("S2SK");
  w.u8(kSparseWireVersion);
  w.u64(part.dim());
  w.u64(part.num_blocks());
  w.u64(p.sketch.rows());
  w.u64(p.sketch.cols());
  w.u64(p.sketch.seed());
  std::vector<std::uint32_t> bits(p.mask.flags.begin(), p.mask.flags.end());
  w.bytes(wire::pack_bits(bits, 1));
  for (double v : p.sketch.table()) w.f32(static_cast<float>(v));
  return std::move(w).take();
}

inline SparsePayload deserialize_sparse(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  r.expect_magic("S2SK");
  if (r.u8() != kSparseWireVersion) throw FormatError("S2SK: unsupported version");
  const auto dim = r.u64();
  const auto blocks = r.u64();
  const auto rows = r.u64();
  const auto cols = r.u64();
  const auto seed = r.u64();
  if (dim == 0 || blocks == 0 || blocks > dim || rows == 0 || cols == 0) {
    throw FormatError("S2SK: invalid header");
  }
  const auto flags = wire::unpack_bits(r.bytes((blocks + 7) / 8), blocks, 1);
  if (r.remaining() != 4 * rows * cols) throw FormatError("S2SK: table size mismatch");
  SparsePayload p{BlockMask(BlockPartition(dim, blocks)), CountSketchTable(dim, rows, cols, seed)};
  for (std::size_t b = 0; b < blocks; ++b) p.mask.flags[b] = static_cast<std::uint8_t>(flags[b]);
  for (auto& v : p.sketch.table()) v = r.f32();
  r.expect_end();
  return p;
}

}  // namespace sketchgc
