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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sketchgc/error.hpp"

namespace sketchgc {

/// Dense gradient storage. All arithmetic is carried out in double precision;
/// payloads narrow to 32-bit floats only on the wire.
using Vector = std::vector<double>;

/// Throws InputError if any entry is NaN or infinite.
inline void require_finite(std::span<const double> g, const char* what = "gradient") {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw InputError(std::string(what) + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

inline double l2_norm_sq(std::span<const double> g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return s;
}

inline double l2_norm(std::span<const double> g) { return std::sqrt(l2_norm_sq(g)); }

inline double linf_norm(std::span<const double> g) {
  double m = 0.0;
  for (double v : g) m = std::max(m, std::abs(v));
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double distance_sq(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "distance_sq");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Hashing

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent seed from a parent seed and a tag.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return mix64(mix64(seed) ^ (tag * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

enum class HashKind : std::uint8_t { bucket_only = 0, bucket_and_sign = 1 };

/// Seeded uniform bucket hash (and optional sign hash) standing in for the
/// 0/1 (or 0/+-1) indicator matrix A without ever materializing it.
///
/// The low 63 bits of the mixed word select the bucket; bit 63 is reserved
/// for the sign so that h(i) and s(i) are drawn from disjoint bits.
struct HashMapping {
  std::uint64_t seed = 0;
  std::size_t buckets = 1;
  HashKind kind = HashKind::bucket_only;

  HashMapping() = default;
  HashMapping(std::uint64_t seed_, std::size_t buckets_, HashKind kind_ = HashKind::bucket_only)
      : seed(seed_), buckets(buckets_), kind(kind_) {
    if (buckets == 0) throw ConfigError("HashMapping: bucket count must be >= 1");
  }

  std::uint64_t word(std::size_t index) const noexcept {
    return mix64(mix64(seed) + static_cast<std::uint64_t>(index));
  }

  std::size_t bucket(std::size_t index) const noexcept {
    return static_cast<std::size_t>((word(index) & 0x7fffffffffffffffULL) % buckets);
  }

  /// +1 or -1. Always +1 for bucket-only mappings.
  int sign(std::size_t index) const noexcept {
    if (kind == HashKind::bucket_only) return 1;
    return (word(index) >> 63) != 0 ? -1 : 1;
  }

  friend bool operator==(const HashMapping&, const HashMapping&) = default;
};

inline std::size_t seeded_bucket(const HashMapping& mapping, std::size_t index) noexcept {
  return mapping.bucket(index);
}

// ---------------------------------------------------------------------------
// Blocks

/// Contiguous partition of [0, dim) into num_blocks blocks of ceil(dim/b)
/// entries. The final block is ragged; trailing blocks may be empty when
/// ceil(dim/b) * (b - 1) >= dim.
class BlockPartition {
 public:
  BlockPartition() = default;
  BlockPartition(std::size_t dim, std::size_t num_blocks) : dim_(dim), num_blocks_(num_blocks) {
    if (dim == 0) throw ConfigError("BlockPartition: dim must be >= 1");
    if (num_blocks == 0 || num_blocks > dim) {
      throw ConfigError("BlockPartition: need 1 <= num_blocks <= dim");
    }
    block_size_ = (dim + num_blocks - 1) / num_blocks;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_blocks() const noexcept { return num_blocks_; }
  std::size_t block_size() const noexcept { return block_size_; }

  std::size_t begin(std::size_t block) const noexcept {
    return std::min(dim_, block * block_size_);
  }
  std::size_t end(std::size_t block) const noexcept {
    return std::min(dim_, (block + 1) * block_size_);
  }
  std::size_t block_of(std::size_t index) const noexcept { return index / block_size_; }

  friend bool operator==(const BlockPartition&, const BlockPartition&) = default;

 private:
  std::size_t dim_ = 0;
  std::size_t num_blocks_ = 0;
  std::size_t block_size_ = 0;
};

// ---------------------------------------------------------------------------
// Randomness

/// Deterministic generator. uniform() consumes exactly one engine draw, so a
/// loop drawing once per entry is reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Worker threads for embarrassingly parallel loops; SKETCHGC_THREADS
/// overrides the hardware default.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("SKETCHGC_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. fn must only
/// write to per-index state; results are then independent of scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t threads = std::min(thread_count(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([lo, hi, &fn, &err = errors[t]] {
        try {
          for (std::size_t i = lo; i < hi; ++i) fn(i);
        } catch (...) {
          err = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sketchgc
