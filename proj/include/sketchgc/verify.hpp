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

// Monte Carlo and exhaustive-enumeration checks of the sketch error laws.
//
// Every trial t draws from its own seed derive_seed(seed, t) and writes to
// its own slot; reductions run sequentially in trial order, so results do
// not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sketchgc/casq.hpp"
#include "sketchgc/cluster.hpp"
#include "sketchgc/core.hpp"
#include "sketchgc/sketch.hpp"
#include "sketchgc/sparse.hpp"

namespace sketchgc {

// ---------------------------------------------------------------------------
// Sample statistics

/// Neumaier-compensated sum.
inline double compensated_sum(std::span<const double> xs) {
  double sum = 0.0;
  double c = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double se = 0.0;        // standard error of the mean
};

inline SampleStats sample_stats(std::span<const double> xs) {
  SampleStats s;
  s.n = xs.size();
  if (s.n == 0) return s;
  s.mean = compensated_sum(xs) / static_cast<double>(s.n);
  if (s.n > 1) {
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - s.mean) * (xs[i] - s.mean);
    s.variance = compensated_sum(sq) / static_cast<double>(s.n - 1);
  }
  s.se = std::sqrt(s.variance / static_cast<double>(s.n));
  return s;
}

// ---------------------------------------------------------------------------
// Reports

struct Tolerance {
  double mean_se = 3.0;       // |empirical - theory| <= k * SE
  double variance_rel = 0.05; // |empirical / theory - 1| <= tol
};

struct MomentReport {
  std::string name;
  std::size_t trials = 0;
  double theoretical_mean = 0.0;
  double empirical_mean = 0.0;
  double mean_se = 0.0;
  double theoretical_variance = 0.0;
  double empirical_variance = 0.0;
  double variance_rel_error = 0.0;
  bool mean_pass = false;
  bool variance_pass = false;
  Tolerance tolerance;

  bool pass() const { return mean_pass && variance_pass; }
};

inline void grade(MomentReport& r, const SampleStats& s) {
  r.trials = s.n;
  r.empirical_mean = s.mean;
  r.mean_se = s.se;
  r.empirical_variance = s.variance;
  const double dm = std::abs(s.mean - r.theoretical_mean);
  r.mean_pass = dm <= r.tolerance.mean_se * s.se || (s.se == 0.0 && dm <= 1e-12);
  if (r.theoretical_variance == 0.0) {
    r.variance_rel_error = s.variance;
    r.variance_pass = s.variance <= 1e-24;
  } else {
    r.variance_rel_error = std::abs(s.variance / r.theoretical_variance - 1.0);
    r.variance_pass = r.variance_rel_error <= r.tolerance.variance_rel;
  }
}

// ---------------------------------------------------------------------------
// Count-min, sum query

inline double cm_loss_mean(std::size_t n, std::size_t m, double mu) {
  return static_cast<double>(n - 1) * mu / static_cast<double>(m);
}

inline double cm_loss_variance(std::size_t n, std::size_t m, double mu, double sigma) {
  const double md = static_cast<double>(m);
  return static_cast<double>(n - 1) / md * (sigma * sigma + (1.0 - 1.0 / md) * mu * mu);
}

/// Loss g_hat(0) - g(0) over fresh i.i.d. N(mu, sigma^2) gradients and a
/// fresh hash seed per trial.
inline MomentReport mc_cm_moments(std::size_t n, std::size_t m, double mu, double sigma,
                                  std::size_t trials, std::uint64_t seed, Tolerance tol = {}) {
  if (n < 2 || m < 1 || m >= n) throw ConfigError("mc_cm_moments: need N > m >= 1");
  if (trials < 2) throw ConfigError("mc_cm_moments: need at least 2 trials");
  if (!(sigma >= 0.0)) throw ConfigError("mc_cm_moments: sigma must be >= 0");
  std::vector<double> loss(trials);
  parallel_for(trials, [&](std::size_t t) {
    const auto ts = derive_seed(seed, t);
    Rng rng(ts);
    Vector g(n);
    for (double& x : g) x = sigma > 0.0 ? rng.normal(mu, sigma) : mu;
    CountMinArray sk(n, m, derive_seed(ts, 1));
    sk.insert(g);
    loss[t] = sk.query()[0] - g[0];
  });
  MomentReport r;
  r.name = "count-min loss moments";
  r.tolerance = tol;
  r.theoretical_mean = cm_loss_mean(n, m, mu);
  r.theoretical_variance = cm_loss_variance(n, m, mu, sigma);
  grade(r, sample_stats(loss));
  return r;
}

struct EntryMoments {
  double enum_mean = 0.0;
  double enum_variance = 0.0;
  double formula_mean = 0.0;
  double formula_variance = 0.0;
};

inline constexpr std::uint64_t kMaxEnumeration = 1'000'000;

namespace detail {
inline std::uint64_t checked_power(std::size_t m, std::size_t n) {
  std::uint64_t states = 1;
  for (std::size_t i = 0; i < n; ++i) {
    states *= m;
    if (states > kMaxEnumeration) {
      throw ConfigError("enumeration needs m^N <= 1e6 hash maps");
    }
  }
  return states;
}

/// Calls fn(h) for every map h: [0, n) -> [0, m).
template <class Fn>
void for_each_map(std::size_t n, std::size_t m, Fn&& fn) {
  const std::uint64_t states = checked_power(m, n);
  std::vector<std::size_t> h(n, 0);
  for (std::uint64_t s = 0; s < states; ++s) {
    fn(std::span<const std::size_t>(h));
    for (std::size_t i = 0; i < n; ++i) {
      if (++h[i] < m) break;
      h[i] = 0;
    }
  }
}
}  // namespace detail

/// Exact per-entry loss moments of the sum query for fixed g, by
/// enumerating all m^N equiprobable hash maps, next to the closed forms
/// sum_{i != j} g(i) / m and (1/m)(1 - 1/m) sum_{i != j} g(i)^2.
inline std::vector<EntryMoments> exhaustive_cm_oracle(std::span<const double> g, std::size_t m) {
  require_finite(g);
  if (m == 0) throw ConfigError("exhaustive_cm_oracle: m must be >= 1");
  const std::size_t n = g.size();
  const double states = static_cast<double>(detail::checked_power(m, n));
  Vector sum(n, 0.0);
  Vector sum_sq(n, 0.0);
  Vector buckets(m);
  detail::for_each_map(n, m, [&](std::span<const std::size_t> h) {
    std::fill(buckets.begin(), buckets.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) buckets[h[i]] += g[i];
    for (std::size_t j = 0; j < n; ++j) {
      const double loss = buckets[h[j]] - g[j];
      sum[j] += loss;
      sum_sq[j] += loss * loss;
    }
  });
  const double md = static_cast<double>(m);
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  const double total_sq = l2_norm_sq(g);
  std::vector<EntryMoments> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto& e = out[j];
    e.enum_mean = sum[j] / states;
    e.enum_variance = sum_sq[j] / states - e.enum_mean * e.enum_mean;
    e.formula_mean = (total - g[j]) / md;
    e.formula_variance = (1.0 / md) * (1.0 - 1.0 / md) * (total_sq - g[j] * g[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Averaged sketch (single CASQ cluster)

/// (1 - m/N_k)(mu_k - g(j))
inline double cas_loss_mean(std::size_t nk, std::size_t m, double mu, double gj) {
  return (1.0 - static_cast<double>(m) / static_cast<double>(nk)) * (mu - gj);
}

/// m (N_k - 1) / N_k^2 * (sigma_k^2 + (1 - 1/m) mu_k^2)
inline double cas_loss_variance(std::size_t nk, std::size_t m, double mu, double sigma) {
  const double n = static_cast<double>(nk);
  const double md = static_cast<double>(m);
  return md * (n - 1.0) / (n * n) * (sigma * sigma + (1.0 - 1.0 / md) * mu * mu);
}

struct ExactCasMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact loss moments for the i.i.d. model: the other N_k - 1 entries are
/// N(mu, sigma^2) and land in g(j)'s bucket independently with probability
/// 1/m, so with n ~ Bin(N_k - 1, 1/m) colliders
///   E = (mu - g) E[n/(n+1)],
///   Var = sigma^2 E[n/(n+1)^2] + (mu - g)^2 Var[n/(n+1)].
inline ExactCasMoments cas_exact_moments(std::size_t nk, std::size_t m, double mu, double sigma,
                                         double gj) {
  const std::size_t trials = nk - 1;
  const double p = 1.0 / static_cast<double>(m);
  double e1 = 0.0;
  double e2 = 0.0;
  double e3 = 0.0;
  for (std::size_t k = 0; k <= trials; ++k) {
    const double logp = std::lgamma(static_cast<double>(trials) + 1.0) -
                        std::lgamma(static_cast<double>(k) + 1.0) -
                        std::lgamma(static_cast<double>(trials - k) + 1.0) +
                        static_cast<double>(k) * std::log(p) +
                        (p < 1.0 ? static_cast<double>(trials - k) * std::log1p(-p)
                                 : (trials == k ? 0.0 : -INFINITY));
    const double pk = std::exp(logp);
    const double r = static_cast<double>(k) / static_cast<double>(k + 1);
    e1 += pk * r;
    e2 += pk * r * r;
    e3 += pk * static_cast<double>(k) / static_cast<double>((k + 1) * (k + 1));
  }
  const double d = mu - gj;
  return {d * e1, sigma * sigma * e3 + d * d * (e2 - e1 * e1)};
}

/// Exact moments of g_hat(j) - g(j) for a fixed vector by enumerating all
/// m^N bucket maps of the averaged sketch.
inline ExactCasMoments exhaustive_cas_oracle(std::span<const double> g, std::size_t m,
                                             std::size_t j) {
  require_finite(g);
  if (j >= g.size()) throw DimensionError("exhaustive_cas_oracle: index out of range");
  const std::size_t n = g.size();
  const double states = static_cast<double>(detail::checked_power(m, n));
  double s1 = 0.0;
  double s2 = 0.0;
  detail::for_each_map(n, m, [&](std::span<const std::size_t> h) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (h[i] == h[j]) {
        sum += g[i];
        ++cnt;
      }
    }
    const double loss = sum / static_cast<double>(cnt) - g[j];
    s1 += loss;
    s2 += loss * loss;
  });
  const double mean = s1 / states;
  return {mean, s2 / states - mean * mean};
}

struct CasMomentReport {
  MomentReport loss;  // mean and variance of g_hat(j) - g(j)
  ExactCasMoments exact;
  double exact_vs_formula_variance_ratio = 0.0;
  // ||g_hat||^2 - ||g||^2 over trials.
  double energy_gap_mean = 0.0;
  double energy_gap_se = 0.0;
  bool energy_pass = false;
  double delta_hat = 0.0;  // 1 - mean ||g_hat - g||^2 / ||g||^2

  bool pass() const { return loss.pass() && energy_pass; }
};

/// Single cluster of N_k entries: entry 0 is pinned to g(j), the rest are
/// fresh N(mu, sigma^2) each trial, hashed into m buckets by a fresh seed.
inline CasMomentReport mc_cas_moments(std::size_t nk, std::size_t m, double mu, double sigma,
                                      double gj, std::size_t trials, std::uint64_t seed,
                                      Tolerance tol = {}) {
  if (nk < 1 || m < 1) throw ConfigError("mc_cas_moments: need N_k >= 1 and m >= 1");
  if (m > nk) throw ConfigError("mc_cas_moments: need m <= N_k");
  if (trials < 2) throw ConfigError("mc_cas_moments: need at least 2 trials");
  std::vector<double> loss(trials);
  std::vector<double> gap(trials);
  std::vector<double> rel(trials);
  parallel_for(trials, [&](std::size_t t) {
    const auto ts = derive_seed(seed, t);
    Rng rng(ts);
    Vector g(nk);
    g[0] = gj;
    for (std::size_t i = 1; i < nk; ++i) g[i] = sigma > 0.0 ? rng.normal(mu, sigma) : mu;
    AveragedSketch sk(nk, m, derive_seed(ts, 1));
    for (std::size_t i = 0; i < nk; ++i) sk.add(i, g[i]);
    Vector gh(nk);
    for (std::size_t i = 0; i < nk; ++i) gh[i] = sk.query(i);
    loss[t] = gh[0] - g[0];
    gap[t] = l2_norm_sq(gh) - l2_norm_sq(g);
    const double gg = l2_norm_sq(g);
    rel[t] = gg > 0.0 ? distance_sq(gh, g) / gg : 0.0;
  });
  CasMomentReport r;
  r.loss.name = "averaged-sketch loss moments";
  r.loss.tolerance = tol;
  r.loss.theoretical_mean = cas_loss_mean(nk, m, mu, gj);
  r.loss.theoretical_variance = cas_loss_variance(nk, m, mu, sigma);
  grade(r.loss, sample_stats(loss));
  r.exact = cas_exact_moments(nk, m, mu, sigma, gj);
  if (r.loss.theoretical_variance > 0.0) {
    r.exact_vs_formula_variance_ratio = r.exact.variance / r.loss.theoretical_variance;
  }
  const auto gs = sample_stats(gap);
  r.energy_gap_mean = gs.mean;
  r.energy_gap_se = gs.se;
  r.energy_pass = gs.mean <= tol.mean_se * gs.se + 1e-12;
  r.delta_hat = 1.0 - sample_stats(rel).mean;
  return r;
}

// ---------------------------------------------------------------------------
// delta-approximate compressors

struct DeltaReport {
  double delta_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;  // 95% normal interval
  double ci_high = 0.0;
  std::size_t trials = 0;
  std::size_t skipped = 0;  // zero-norm inputs
};

using GradientSource = std::function<Vector(Rng&)>;
using Compressor = std::function<Vector(std::span<const double>, std::uint64_t)>;

/// delta_hat = 1 - mean ||C(g) - g||^2 / ||g||^2 over independent inputs.
inline DeltaReport delta_estimate(const Compressor& compress, const GradientSource& source,
                                  std::size_t trials, std::uint64_t seed) {
  if (trials < 2) throw ConfigError("delta_estimate: need at least 2 trials");
  std::vector<double> ratio(trials, 0.0);
  std::vector<std::uint8_t> used(trials, 0);
  parallel_for(trials, [&](std::size_t t) {
    const auto ts = derive_seed(seed, t);
    Rng rng(ts);
    const Vector g = source(rng);
    const double gg = l2_norm_sq(g);
    if (gg == 0.0) return;
    ratio[t] = distance_sq(compress(g, derive_seed(ts, 1)), g) / gg;
    used[t] = 1;
  });
  std::vector<double> kept;
  DeltaReport r;
  for (std::size_t t = 0; t < trials; ++t) {
    if (used[t]) kept.push_back(ratio[t]);
    else ++r.skipped;
  }
  const auto s = sample_stats(kept);
  r.trials = kept.size();
  r.delta_hat = 1.0 - s.mean;
  r.se = s.se;
  r.ci_low = r.delta_hat - 1.96 * s.se;
  r.ci_high = r.delta_hat + 1.96 * s.se;
  return r;
}

/// Four-component Gaussian mixture: many small entries of either sign and a
/// few large ones.
inline Vector gaussian_mixture(std::size_t n, Rng& rng) {
  static constexpr double kMeans[] = {-0.3, -0.02, 0.02, 0.3};
  static constexpr double kSd[] = {0.05, 0.01, 0.01, 0.05};
  static constexpr double kCum[] = {0.1, 0.5, 0.9, 1.0};
  Vector g(n);
  for (double& x : g) {
    const double u = rng.uniform();
    std::size_t c = 0;
    while (c < 3 && u >= kCum[c]) ++c;
    x = rng.normal(kMeans[c], kSd[c]);
  }
  return g;
}

/// Random sign times a log-normal magnitude, mixing two scales.
inline Vector lognormal_mixture(std::size_t n, Rng& rng) {
  Vector g(n);
  for (double& x : g) {
    const double scale = rng.uniform() < 0.8 ? std::log(0.01) : std::log(0.2);
    const double mag = std::exp(rng.normal(scale, 0.5));
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return g;
}

/// CASQ applied to one vector, fitting the clusters on that vector.
inline Compressor casq_compressor(CasqConfig cfg) {
  return [cfg](std::span<const double> g, std::uint64_t seed) {
    CasqConfig c = cfg;
    c.seed = seed;
    CasqCompressor pipe(c);
    const std::vector<Vector> in{Vector(g.begin(), g.end())};
    pipe.refresh(0, in);
    return pipe.decompress(pipe.compress(g));
  };
}

struct CasDeltaReport {
  DeltaReport delta;
  double max_fill_ratio = 0.0;  // max_k m_k / N_k observed on the first input
  bool pass() const { return delta.ci_low > 0.0 && delta.delta_hat < 1.0; }
};

/// CASQ with K clusters, M = N/16 buckets and m_k <= N_k/16 on
/// Gaussian-mixture inputs.
inline CasDeltaReport cas_delta_estimate(std::size_t n, std::size_t clusters, std::size_t trials,
                                         std::uint64_t seed) {
  CasqConfig cfg;
  cfg.num_clusters = clusters;
  cfg.total_buckets = std::max<std::size_t>(clusters, n / 16);
  cfg.max_fill = 1.0 / 16.0;
  CasDeltaReport r;
  r.delta = delta_estimate(casq_compressor(cfg), [n](Rng& rng) { return gaussian_mixture(n, rng); },
                           trials, seed);
  Rng rng(derive_seed(seed, 0));
  const Vector g = gaussian_mixture(n, rng);
  CasqConfig c = cfg;
  c.seed = 1;
  CasqCompressor pipe(c);
  pipe.refresh(0, std::vector<Vector>{g});
  const auto stats = cluster_stats(g, pipe.assign(g));
  for (std::size_t k = 0; k < clusters; ++k) {
    if (stats.count[k] == 0) continue;
    r.max_fill_ratio = std::max(r.max_fill_ratio, static_cast<double>(pipe.allocation().buckets[k]) /
                                                      static_cast<double>(stats.count[k]));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Count-sketch unbiasedness through the sparse-sketch path

struct UnbiasednessReport {
  std::size_t trials = 0;
  std::vector<std::size_t> indices;
  Vector mean_error;
  Vector se;
  Vector z;  // mean_error / se
  double max_abs_z = 0.0;
  double k_se = 4.0;
  // E||U(sparse(g))||^2 against ||sparse(g)||^2, reported only.
  double second_moment = 0.0;
  double sparse_energy = 0.0;
  bool pass() const { return max_abs_z <= k_se; }
};

/// Fixed g, fixed Top-K mask, fresh sketch seed per trial; error of the
/// decoded value at every masked index.
inline UnbiasednessReport cs_unbiasedness(std::span<const double> g, std::size_t num_blocks,
                                          std::size_t topk, std::size_t rows, double lambda,
                                          std::size_t trials, std::uint64_t seed,
                                          double k_se = 4.0) {
  const auto mask = block_topk(g, num_blocks, topk);
  const Vector target = sparsify(g, mask);
  const double alpha = static_cast<double>(mask.covered()) / static_cast<double>(g.size());
  const std::size_t cols = sketch_columns(g.size(), alpha, lambda, rows);
  UnbiasednessReport r;
  r.trials = trials;
  r.k_se = k_se;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (mask.covers(i)) r.indices.push_back(i);
  }
  const std::size_t q = r.indices.size();
  std::vector<double> err(trials * q);
  std::vector<double> energy(trials);
  parallel_for(trials, [&](std::size_t t) {
    const auto p = sparse_compress(g, mask, rows, cols, derive_seed(seed, t));
    const Vector dec = sparse_decompress(p, 1);
    for (std::size_t k = 0; k < q; ++k) err[t * q + k] = dec[r.indices[k]] - g[r.indices[k]];
    energy[t] = l2_norm_sq(dec);
  });
  std::vector<double> col(trials);
  for (std::size_t k = 0; k < q; ++k) {
    for (std::size_t t = 0; t < trials; ++t) col[t] = err[t * q + k];
    const auto s = sample_stats(col);
    r.mean_error.push_back(s.mean);
    r.se.push_back(s.se);
    const double z = s.se > 0.0 ? s.mean / s.se : (s.mean == 0.0 ? 0.0 : INFINITY);
    r.z.push_back(z);
    r.max_abs_z = std::max(r.max_abs_z, std::abs(z));
  }
  r.second_moment = sample_stats(energy).mean;
  r.sparse_energy = l2_norm_sq(target);
  return r;
}

}  // namespace sketchgc
