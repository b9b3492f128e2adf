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

// Cluster-aware sketch quantization (CASQ).
//
// Each worker labels every gradient entry with a value cluster, hashes the
// entries of cluster k into m_k buckets and ships the per-bucket means plus
// the labels. Payloads from W workers merge by element-wise addition: the
// bucket means are summed (and later divided by W) and the labels become
// per-entry vote counts C[j][k]. Decompression evaluates
//
//   g_hat(j) = (1/W) * sum_k C[j][k] * S[k][h_k(j)],   S = (1/W) sum_i S^i.
//
// Per-cluster hash seeds derive from (global seed, window id, cluster id) so
// every worker in a clustering window shares the same projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sketchgc/cluster.hpp"
#include "sketchgc/core.hpp"
#include "sketchgc/sketch.hpp"
#include "sketchgc/wire.hpp"

namespace sketchgc {

inline std::uint64_t cluster_seed(std::uint64_t global_seed, std::uint64_t window_id,
                                  std::size_t cluster) {
  return derive_seed(derive_seed(global_seed, window_id), cluster);
}

struct CasPayload {
  std::uint64_t window_id = 0;
  std::size_t dim = 0;
  std::size_t num_clusters = 0;
  std::size_t workers = 1;
  std::vector<std::uint32_t> bucket_counts;  // m_k
  // Concatenated per-cluster bucket values, cluster-major. Holds the SUM of
  // the merged workers' bucket means; divide by `workers` for S.
  Vector bucket_values;
  // Row-major dim x num_clusters label votes (one-hot when workers == 1).
  std::vector<std::uint32_t> votes;

  std::size_t offset(std::size_t cluster) const {
    return std::accumulate(bucket_counts.begin(),
                           bucket_counts.begin() + static_cast<std::ptrdiff_t>(cluster),
                           std::size_t{0});
  }

  std::size_t total_buckets() const {
    return std::accumulate(bucket_counts.begin(), bucket_counts.end(), std::size_t{0});
  }

  /// Averaged bucket value S[k][b].
  double mean(std::size_t cluster, std::size_t bucket) const {
    return bucket_values[offset(cluster) + bucket] / static_cast<double>(workers);
  }

  std::uint32_t vote(std::size_t index, std::size_t cluster) const {
    return votes[index * num_clusters + cluster];
  }

  /// Labels of a single-worker payload.
  std::vector<std::uint32_t> labels() const {
    if (workers != 1) throw ConfigError("CasPayload::labels: payload is merged");
    std::vector<std::uint32_t> out(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t k = 0; k < num_clusters; ++k) {
        if (vote(j, k) != 0) out[j] = static_cast<std::uint32_t>(k);
      }
    }
    return out;
  }

  friend bool operator==(const CasPayload&, const CasPayload&) = default;
};

/// Compresses g into per-cluster averaged sketches. Clusters with m_k = 0
/// contribute nothing; their entries decode to zero.
inline CasPayload cas_compress(std::span<const double> g, const ClusterAssignment& assignment,
                               const BucketAllocation& allocation, std::uint64_t global_seed,
                               std::uint64_t window_id) {
  require_finite(g);
  require_same_dim(g.size(), assignment.labels.size(), "cas_compress labels");
  require_same_dim(allocation.buckets.size(), assignment.num_clusters, "cas_compress allocation");
  const std::size_t k = assignment.num_clusters;

  CasPayload p;
  p.window_id = window_id;
  p.dim = g.size();
  p.num_clusters = k;
  p.workers = 1;
  p.bucket_counts.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    p.bucket_counts[c] = static_cast<std::uint32_t>(allocation.buckets[c]);
  }
  p.votes.assign(p.dim * k, 0);

  std::vector<AveragedSketch> sketches;
  sketches.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    sketches.emplace_back(p.dim, std::max<std::size_t>(1, allocation.buckets[c]),
                          cluster_seed(global_seed, window_id, c));
  }
  for (std::size_t j = 0; j < p.dim; ++j) {
    const auto c = assignment.labels[j];
    if (c >= k) throw ConfigError("cas_compress: label out of range");
    p.votes[j * k + c] = 1;
    if (allocation.buckets[c] > 0) sketches[c].add(j, g[j]);
  }

  p.bucket_values.reserve(p.total_buckets());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t b = 0; b < allocation.buckets[c]; ++b) {
      p.bucket_values.push_back(sketches[c].mean(b));
    }
  }
  return p;
}

namespace detail {
inline void require_cas_compatible(const CasPayload& a, const CasPayload& b) {
  auto fail = [](const char* field) {
    throw IncompatibleError(std::string("cas_merge: mismatched ") + field);
  };
  if (a.window_id != b.window_id) fail("window_id");
  if (a.dim != b.dim) fail("dim");
  if (a.num_clusters != b.num_clusters) fail("num_clusters");
  if (a.bucket_counts != b.bucket_counts) fail("bucket_counts");
}
}  // namespace detail

/// Element-wise merge. Associative and commutative; the result's multiplicity
/// is the sum of the inputs' multiplicities.
inline CasPayload cas_merge(std::span<const CasPayload> payloads) {
  if (payloads.empty()) throw ConfigError("cas_merge: no payloads");
  CasPayload out = payloads.front();
  for (std::size_t i = 1; i < payloads.size(); ++i) {
    const auto& p = payloads[i];
    detail::require_cas_compatible(out, p);
    out.workers += p.workers;
    for (std::size_t b = 0; b < out.bucket_values.size(); ++b) {
      out.bucket_values[b] += p.bucket_values[b];
    }
    for (std::size_t v = 0; v < out.votes.size(); ++v) out.votes[v] += p.votes[v];
  }
  return out;
}

inline Vector cas_decompress(const CasPayload& p, std::uint64_t global_seed) {
  std::vector<HashMapping> maps;
  std::vector<std::size_t> offsets;
  maps.reserve(p.num_clusters);
  std::size_t off = 0;
  for (std::size_t c = 0; c < p.num_clusters; ++c) {
    maps.emplace_back(cluster_seed(global_seed, p.window_id, c),
                      std::max<std::uint32_t>(1, p.bucket_counts[c]));
    offsets.push_back(off);
    off += p.bucket_counts[c];
  }
  const double w = static_cast<double>(p.workers);
  Vector out(p.dim, 0.0);
  for (std::size_t j = 0; j < p.dim; ++j) {
    double acc = 0.0;
    for (std::size_t c = 0; c < p.num_clusters; ++c) {
      const auto v = p.votes[j * p.num_clusters + c];
      if (v == 0 || p.bucket_counts[c] == 0) continue;
      acc += static_cast<double>(v) * (p.bucket_values[offsets[c] + maps[c].bucket(j)] / w);
    }
    out[j] = acc / w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wire format and cost accounting
//
//   "CASQ" | version u8 | window u64 | N u64 | K u64 | W u64 | m_k u32[K]
//   | bucket means f32[sum m_k] | assignment
//
// The assignment is bit-packed labels (ceil(log2 K) bits each) when W == 1
// and u32 vote counts [N][K] otherwise.

inline constexpr std::uint8_t kCasWireVersion = 1;
inline constexpr std::uint64_t kCasFixedHeaderBits = 8 * (4 + 1 + 8 + 8 + 8 + 8);

inline std::uint64_t cas_header_bits(std::size_t num_clusters) {
  return kCasFixedHeaderBits + 32 * static_cast<std::uint64_t>(num_clusters);
}

inline std::uint64_t cas_assignment_bits(std::size_t dim, std::size_t num_clusters,
                                         std::size_t workers) {
  if (workers == 1) return static_cast<std::uint64_t>(dim) * wire::bits_for(num_clusters);
  return 32ULL * dim * num_clusters;
}

/// Bits of the wire form before byte padding.
inline std::uint64_t cas_comm_bits(std::size_t dim, std::size_t num_clusters,
                                   std::size_t total_buckets, std::size_t workers = 1) {
  return cas_header_bits(num_clusters) + 32ULL * total_buckets +
         cas_assignment_bits(dim, num_clusters, workers);
}

inline std::uint64_t cas_comm_bits(const CasPayload& p) {
  return cas_comm_bits(p.dim, p.num_clusters, p.total_buckets(), p.workers);
}

/// Downstream size of the two-cluster variant where the merged assignment
/// is sent back as per-entry vote counts in [0, W]: N*ceil(log2(W+1)) + 32*M.
inline std::uint64_t cas_merged_binary_bits(std::size_t dim, std::size_t workers,
                                            std::size_t total_buckets) {
  return static_cast<std::uint64_t>(dim) * wire::bits_for(workers + 1) + 32ULL * total_buckets;
}

/// Nominal size ratio log2(W)/32 of a merged binary assignment against a
/// 32-bit float gradient.
inline double cas_merged_binary_nominal_ratio(std::size_t workers) {
  return std::log2(static_cast<double>(workers)) / 32.0;
}

inline wire::Bytes serialize(const CasPayload& p) {
  wire::Writer w;
  w.magic("CASQ");
  w.u8(kCasWireVersion);
  w.u64(p.window_id);
  w.u64(p.dim);
  w.u64(p.num_clusters);
  w.u64(p.workers);
  for (auto m : p.bucket_counts) w.u32(m);
  const double wd = static_cast<double>(p.workers);
  for (double v : p.bucket_values) w.f32(static_cast<float>(v / wd));
  if (p.workers == 1) {
    w.bytes(wire::pack_bits(p.labels(), wire::bits_for(p.num_clusters)));
  } else {
    for (auto v : p.votes) w.u32(v);
  }
  return std::move(w).take();
}

inline CasPayload deserialize_cas(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  r.expect_magic("CASQ");
  if (r.u8() != kCasWireVersion) throw FormatError("CASQ: unsupported version");
  CasPayload p;
  p.window_id = r.u64();
  p.dim = r.u64();
  p.num_clusters = r.u64();
  p.workers = r.u64();
  if (p.num_clusters == 0 || p.workers == 0) throw FormatError("CASQ: zero K or W");
  if (p.num_clusters > r.remaining() / 4) throw FormatError("CASQ: truncated bucket counts");
  p.bucket_counts.resize(p.num_clusters);
  for (auto& m : p.bucket_counts) m = r.u32();
  const std::size_t total = p.total_buckets();
  if (total > r.remaining() / 4) throw FormatError("CASQ: truncated bucket values");
  p.bucket_values.resize(total);
  const double wd = static_cast<double>(p.workers);
  for (auto& v : p.bucket_values) v = static_cast<double>(r.f32()) * wd;
  p.votes.assign(p.dim * p.num_clusters, 0);
  if (p.workers == 1) {
    const unsigned width = wire::bits_for(p.num_clusters);
    const auto labels = wire::unpack_bits(r.bytes((p.dim * width + 7) / 8), p.dim, width);
    for (std::size_t j = 0; j < p.dim; ++j) {
      if (labels[j] >= p.num_clusters) throw FormatError("CASQ: label out of range");
      p.votes[j * p.num_clusters + labels[j]] = 1;
    }
  } else {
    for (auto& v : p.votes) v = r.u32();
  }
  r.expect_end();
  return p;
}

// ---------------------------------------------------------------------------
// Pipeline

struct CasqConfig {
  std::size_t num_clusters = 4;
  std::size_t total_buckets = 256;  // M
  std::size_t refresh_interval = kDefaultRefreshInterval;
  std::size_t sample_cap = kDefaultSampleCap;
  std::size_t kmeans_iters = 50;
  double max_fill = 1.0;  // cap m_k <= max_fill * N_k
  std::uint64_t seed = 0;
};

/// Stateful CASQ compressor shared (by value) by all workers of a run. The
/// cluster model and bucket allocation are recomputed every
/// refresh_interval iterations and held fixed in between, so every payload
/// produced inside a window is mergeable with every other.
class CasqCompressor {
 public:
  explicit CasqCompressor(CasqConfig cfg) : cfg_(cfg) {
    if (cfg_.num_clusters == 0) throw ConfigError("CASQ: num_clusters must be >= 1");
    if (cfg_.total_buckets == 0) throw ConfigError("CASQ: total_buckets must be >= 1");
    if (cfg_.refresh_interval == 0) throw ConfigError("CASQ: refresh_interval must be >= 1");
    if (cfg_.sample_cap < cfg_.num_clusters) throw ConfigError("CASQ: sample_cap < num_clusters");
  }

  const CasqConfig& config() const noexcept { return cfg_; }
  bool ready() const noexcept { return ready_; }
  std::uint64_t window_id() const noexcept { return window_; }
  const ClusterModel& model() const noexcept { return model_; }
  const BucketAllocation& allocation() const noexcept { return allocation_; }

  bool needs_refresh(std::size_t iteration) const noexcept {
    return !ready_ || iteration % cfg_.refresh_interval == 0;
  }

  /// Fits the cluster model on a pooled sample of every worker's vector and
  /// sizes the per-cluster sketches from the pooled statistics.
  void refresh(std::size_t iteration, std::span<const Vector> inputs) {
    if (inputs.empty()) throw ConfigError("CASQ refresh: no inputs");
    window_ = iteration / cfg_.refresh_interval;
    const std::size_t per_worker = std::max<std::size_t>(
        1, cfg_.sample_cap / inputs.size());
    Vector pooled;
    Vector all;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      require_finite(inputs[i]);
      auto s = sample_for_clustering(inputs[i], per_worker,
                                     derive_seed(derive_seed(cfg_.seed, window_), 1000 + i));
      pooled.insert(pooled.end(), s.begin(), s.end());
      all.insert(all.end(), inputs[i].begin(), inputs[i].end());
    }
    model_ = kmeans_1d(pooled, cfg_.num_clusters, cfg_.kmeans_iters, 1e-12,
                       derive_seed(cfg_.seed, 0x6b6d65616e73ULL + window_));
    model_.refresh_interval = cfg_.refresh_interval;
    // Degenerate samples can yield fewer centers; pad so K stays fixed.
    while (model_.centers.size() < cfg_.num_clusters) {
      model_.centers.push_back(model_.centers.back());
    }
    auto stats = cluster_stats(all, assign_clusters(all, model_));
    allocation_ = allocate_buckets(stats, std::max(cfg_.total_buckets, nonempty(stats)),
                                   cfg_.max_fill);
    ready_ = true;
  }

  ClusterAssignment assign(std::span<const double> g) const {
    require_ready();
    return assign_clusters(g, model_);
  }

  CasPayload compress(std::span<const double> g) const {
    require_ready();
    return cas_compress(g, assign_clusters(g, model_), allocation_, cfg_.seed, window_);
  }

  Vector decompress(const CasPayload& p) const { return cas_decompress(p, cfg_.seed); }

 private:
  static std::size_t nonempty(const ClusterAssignment& a) {
    return static_cast<std::size_t>(
        std::count_if(a.count.begin(), a.count.end(), [](auto c) { return c > 0; }));
  }

  void require_ready() const {
    if (!ready_) throw ConfigError("CASQ: compressor used before refresh()");
  }

  CasqConfig cfg_;
  bool ready_ = false;
  std::uint64_t window_ = 0;
  ClusterModel model_;
  BucketAllocation allocation_;
};

// ---------------------------------------------------------------------------
// Error feedback

struct ErrorState {
  std::size_t worker = 0;
  Vector error;  // starts at zero

  static ErrorState zeros(std::size_t dim, std::size_t worker = 0) {
    return ErrorState{worker, Vector(dim, 0.0)};
  }
};

/// g_tilde = eta * g + e.
inline Vector ef_prepare(const ErrorState& state, std::span<const double> g, double eta) {
  require_same_dim(state.error.size(), g.size(), "ef_prepare");
  if (!(eta > 0.0)) throw ConfigError("ef_prepare: learning rate must be > 0");
  Vector out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = eta * g[i] + state.error[i];
  return out;
}

/// e' = g_tilde - g_hat.
inline ErrorState ef_update(ErrorState state, std::span<const double> g_tilde,
                            std::span<const double> g_hat) {
  require_same_dim(g_tilde.size(), g_hat.size(), "ef_update");
  state.error.resize(g_tilde.size());
  for (std::size_t i = 0; i < g_tilde.size(); ++i) state.error[i] = g_tilde[i] - g_hat[i];
  return state;
}

struct EfStep {
  CasPayload payload;
  Vector g_tilde;
  Vector decoded;  // g_hat; the parameter update is w <- w - g_hat
  ErrorState next;
};

/// One single-worker error-feedback step through a CASQ compressor that has
/// already been refreshed for the current window.
inline EfStep ef_step(const ErrorState& state, std::span<const double> g, double eta,
                      const CasqCompressor& pipeline) {
  EfStep out;
  out.g_tilde = ef_prepare(state, g, eta);
  out.payload = pipeline.compress(out.g_tilde);
  out.decoded = pipeline.decompress(out.payload);
  out.next = ef_update(state, out.g_tilde, out.decoded);
  return out;
}

}  // namespace sketchgc
