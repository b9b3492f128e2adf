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

// Value clustering for cluster-aware sketching: a sampled 1-D k-means model,
// sign-constrained assignment, per-cluster statistics and the bucket budget
// split across clusters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "sketchgc/core.hpp"

namespace sketchgc {

inline constexpr std::size_t kDefaultSampleCap = 4096;
inline constexpr std::size_t kDefaultRefreshInterval = 64;
inline constexpr std::size_t kEntropyBins = 32;

struct ClusterModel {
  Vector centers;  // sorted ascending, non-empty
  std::size_t refresh_interval = kDefaultRefreshInterval;

  std::size_t size() const noexcept { return centers.size(); }
};

struct ClusterAssignment {
  std::vector<std::uint32_t> labels;  // one per entry, each < num_clusters
  std::size_t num_clusters = 0;

  // Filled by cluster_stats().
  std::vector<std::size_t> count;
  Vector mean;
  Vector stddev;   // population standard deviation
  Vector entropy;  // natural-log histogram entropy
};

struct BucketAllocation {
  std::vector<std::size_t> buckets;  // m_k per cluster
  std::size_t budget = 0;            // M

  std::size_t total() const {
    return std::accumulate(buckets.begin(), buckets.end(), std::size_t{0});
  }
};

/// Number of clusters for a "B-bit" configuration.
constexpr std::size_t clusters_for_bits(unsigned bits) noexcept { return std::size_t{1} << bits; }

/// Uniform sample without replacement of min(N, max_samples) values, kept in
/// index order.
inline Vector sample_for_clustering(std::span<const double> g, std::size_t max_samples,
                                    std::uint64_t seed) {
  if (g.size() <= max_samples) return Vector(g.begin(), g.end());
  Vector out;
  out.reserve(max_samples);
  Rng rng(seed);
  std::sample(g.begin(), g.end(), std::back_inserter(out), max_samples, rng.engine());
  return out;
}

namespace detail {

// Nearest center on a sorted array; ties go to the lower index.
inline std::size_t nearest_sorted(std::span<const double> centers, double v) {
  auto it = std::lower_bound(centers.begin(), centers.end(), v);
  if (it == centers.begin()) return 0;
  if (it == centers.end()) return centers.size() - 1;
  const auto hi = static_cast<std::size_t>(it - centers.begin());
  // Step back over equal centers so ties resolve to the first occurrence.
  std::size_t lo = hi - 1;
  const double dlo = v - centers[lo];
  const double dhi = centers[hi] - v;
  if (dhi < dlo) return hi;
  while (lo > 0 && centers[lo - 1] == centers[lo]) --lo;
  return lo;
}

}  // namespace detail

/// Lloyd iterations on scalars with k-means++ seeding. Inputs with at most K
/// distinct values return those values as centers (possibly fewer than K).
inline ClusterModel kmeans_1d(std::span<const double> sample, std::size_t k,
                              std::size_t max_iters = 50, double tol = 1e-9,
                              std::uint64_t seed = 0) {
  if (k == 0) throw ConfigError("kmeans_1d: K must be >= 1");
  if (sample.empty()) throw ConfigError("kmeans_1d: empty sample");
  require_finite(sample, "kmeans_1d sample");

  Vector sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  Vector distinct;
  std::unique_copy(sorted.begin(), sorted.end(), std::back_inserter(distinct));
  if (distinct.size() <= k && k > 1) return ClusterModel{distinct};

  // k-means++ seeding: first center uniform, then D^2-weighted draws.
  Rng rng(seed);
  Vector centers;
  centers.reserve(k);
  centers.push_back(sorted[rng.below(sorted.size())]);
  Vector d2(sorted.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (sorted[i] - c) * (sorted[i] - c));
      d2[i] = best;
      total += best;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = sorted.size() - 1;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(sorted[pick]);
  }
  std::sort(centers.begin(), centers.end());

  Vector sum(k);
  std::vector<std::size_t> cnt(k);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (double v : sorted) {
      const auto c = detail::nearest_sorted(centers, v);
      sum[c] += v;
      cnt[c] += 1;
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (cnt[c] == 0) continue;  // empty cluster keeps its center
      const double next = sum[c] / static_cast<double>(cnt[c]);
      shift = std::max(shift, std::abs(next - centers[c]));
      centers[c] = next;
    }
    std::sort(centers.begin(), centers.end());
    if (shift < tol) break;
  }
  return ClusterModel{centers};
}

namespace detail {
constexpr int sign_of(double v) noexcept { return (v > 0.0) - (v < 0.0); }
}  // namespace detail

/// Nearest center among those sharing the sign of g(i). Falls back to the
/// global nearest center when no same-sign center exists or g(i) == 0.
/// Ties resolve to the smaller center index.
inline std::uint32_t assign_one(std::span<const double> centers, double v) {
  const int s = detail::sign_of(v);
  std::size_t best = centers.size();
  double best_d = std::numeric_limits<double>::infinity();
  if (s != 0) {
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (detail::sign_of(centers[c]) != s) continue;
      const double d = std::abs(v - centers[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
  }
  if (best == centers.size()) {
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double d = std::abs(v - centers[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
  }
  return static_cast<std::uint32_t>(best);
}

inline ClusterAssignment assign_clusters(std::span<const double> g, const ClusterModel& model) {
  if (model.centers.empty()) throw ConfigError("assign_clusters: empty cluster model");
  ClusterAssignment a;
  a.num_clusters = model.centers.size();
  a.labels.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) a.labels[i] = assign_one(model.centers, g[i]);
  return a;
}

/// Entropy of a 32-bin equal-width histogram over [min, max] of the values.
/// Zero for constant inputs.
inline double histogram_entropy(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double width = *hi_it - lo;
  if (!(width > 0.0)) return 0.0;
  std::vector<std::size_t> hist(kEntropyBins, 0);
  for (double v : values) {
    auto bin = static_cast<std::size_t>((v - lo) / width * static_cast<double>(kEntropyBins));
    hist[std::min(bin, kEntropyBins - 1)] += 1;
  }
  const double n = static_cast<double>(values.size());
  double h = 0.0;
  for (auto c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

/// Fills count / mean / stddev / entropy per cluster.
inline ClusterAssignment cluster_stats(std::span<const double> g, ClusterAssignment a) {
  require_same_dim(g.size(), a.labels.size(), "cluster_stats");
  const std::size_t k = a.num_clusters;
  std::vector<Vector> members(k);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (a.labels[i] >= k) throw ConfigError("cluster_stats: label out of range");
    members[a.labels[i]].push_back(g[i]);
  }
  a.count.assign(k, 0);
  a.mean.assign(k, 0.0);
  a.stddev.assign(k, 0.0);
  a.entropy.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& v = members[c];
    a.count[c] = v.size();
    if (v.empty()) continue;
    const double n = static_cast<double>(v.size());
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    a.mean[c] = mu;
    a.stddev[c] = std::sqrt(ss / n);
    a.entropy[c] = histogram_entropy(v);
  }
  return a;
}

/// Allocation weight sqrt(N_k) * |mu_k| * (1 + H_k).
inline double allocation_weight(std::size_t count, double mean, double entropy) {
  return std::sqrt(static_cast<double>(count)) * std::abs(mean) * (1.0 + entropy);
}

/// Splits M buckets across clusters in proportion to their weights.
///
/// m_k = max(1, round(M w_k / sum w)) for non-empty clusters, 0 for empty
/// ones. Rounding surplus or deficit is settled one bucket at a time against
/// the cluster whose share is furthest from its exact quota (M w_k / sum w).
/// `max_fill` caps m_k at max(1, floor(max_fill * N_k)); capped budget that
/// cannot be placed elsewhere is left unused, so sum m_k <= M.
inline BucketAllocation allocate_buckets(std::span<const std::size_t> counts,
                                         std::span<const double> weights, std::size_t budget,
                                         double max_fill = 1.0) {
  require_same_dim(counts.size(), weights.size(), "allocate_buckets");
  const std::size_t k = counts.size();
  std::size_t nonempty = 0;
  for (auto c : counts) nonempty += c > 0;
  if (budget < nonempty) {
    throw ConfigError("allocate_buckets: budget " + std::to_string(budget) +
                      " below the number of non-empty clusters " + std::to_string(nonempty));
  }

  Vector w(k, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    w[c] = std::max(0.0, weights[c]);
    total += w[c];
  }
  if (!(total > 0.0)) {
    // Degenerate weights (all-zero means): fall back to sqrt(N_k).
    for (std::size_t c = 0; c < k; ++c) {
      w[c] = counts[c] > 0 ? std::sqrt(static_cast<double>(counts[c])) : 0.0;
      total += w[c];
    }
  }

  std::vector<std::size_t> cap(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    const double lim = std::floor(max_fill * static_cast<double>(counts[c]));
    cap[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::max(0.0, lim)));
  }

  BucketAllocation out;
  out.budget = budget;
  out.buckets.assign(k, 0);
  Vector quota(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    quota[c] = static_cast<double>(budget) * w[c] / total;
    const auto r = static_cast<std::size_t>(std::llround(quota[c]));
    out.buckets[c] = std::min(cap[c], std::max<std::size_t>(1, r));
  }

  std::size_t assigned = out.total();
  while (assigned > budget) {
    // Remove from the most over-served cluster that can spare a bucket.
    std::size_t pick = k;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (out.buckets[c] <= 1) continue;
      const double over = static_cast<double>(out.buckets[c]) - quota[c];
      if (over > worst) {
        worst = over;
        pick = c;
      }
    }
    if (pick == k) break;  // unreachable: budget >= nonempty
    out.buckets[pick] -= 1;
    --assigned;
  }
  while (assigned < budget) {
    std::size_t pick = k;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0 || out.buckets[c] >= cap[c]) continue;
      const double under = quota[c] - static_cast<double>(out.buckets[c]);
      if (under > best) {
        best = under;
        pick = c;
      }
    }
    if (pick == k) break;  // every cluster is at its cap
    out.buckets[pick] += 1;
    ++assigned;
  }
  return out;
}

/// Allocation from filled cluster statistics.
inline BucketAllocation allocate_buckets(const ClusterAssignment& a, std::size_t budget,
                                         double max_fill = 1.0) {
  if (a.count.size() != a.num_clusters) {
    throw ConfigError("allocate_buckets: cluster_stats() has not been run");
  }
  Vector w(a.num_clusters);
  for (std::size_t c = 0; c < a.num_clusters; ++c) {
    w[c] = allocation_weight(a.count[c], a.mean[c], a.entropy[c]);
  }
  return allocate_buckets(a.count, w, budget, max_fill);
}

}  // namespace sketchgc
