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

// In-process distributed SGD simulator with error feedback.
//
// Conventions used throughout:
//   f(w) = (1/W) sum_i f_i(w), f_i is worker i's shard objective.
//   g_tilde_i = eta * grad f_i(w_t) + e_i          (learning rate folded in)
//   w_{t+1}   = w_t - g_hat                         (g_hat: decoded aggregate)
//   nu_t      = w_t - (1/W) sum_i e_i               (virtual iterate)
//
// Each worker keeps the residual of its own decode C_i plus its share of the
// aggregation discrepancy D = g_hat - (1/W) sum_i C_i:
//   e_i' = g_tilde_i - C_i - D.
// This makes nu_{t+1} = nu_t - eta * grad f(w_t) exact for any compressor
// and reduces to e_i' = g_tilde_i - g_hat whenever all decodes agree.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sketchgc/casq.hpp"
#include "sketchgc/core.hpp"
#include "sketchgc/quantize.hpp"
#include "sketchgc/sparse.hpp"

namespace sketchgc {

// ---------------------------------------------------------------------------
// Problems

enum class ProblemKind : std::uint8_t { least_squares, logistic };

struct ProblemSpec {
  ProblemKind kind = ProblemKind::least_squares;
  std::size_t samples = 1000;  // n
  std::size_t dim = 200;       // d
  double noise = 0.1;
  std::uint64_t seed = 0;
};

class Problem {
 public:
  Problem(const ProblemSpec& spec, std::size_t workers) : spec_(spec), workers_(workers) {
    if (workers == 0) throw ConfigError("Problem: workers must be >= 1");
    if (spec.dim == 0) throw ConfigError("Problem: dim must be >= 1");
    if (spec.samples < workers) throw ConfigError("Problem: need at least one sample per worker");
    generate();
    const Eigen::MatrixXd gram = x_.transpose() * x_;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lmax = eig.eigenvalues().maxCoeff() / static_cast<double>(spec.samples);
    smoothness_ = spec.kind == ProblemKind::least_squares ? lmax : lmax / 4.0;
    solve_optimum();
  }

  std::size_t dim() const noexcept { return spec_.dim; }
  std::size_t workers() const noexcept { return workers_; }
  const ProblemSpec& spec() const noexcept { return spec_; }
  double smoothness() const noexcept { return smoothness_; }
  double fstar() const noexcept { return fstar_; }
  const Vector& minimizer() const noexcept { return wstar_; }

  /// Shard boundaries [lo, hi) for worker i.
  std::pair<std::size_t, std::size_t> shard(std::size_t i) const {
    const std::size_t n = spec_.samples;
    return {i * n / workers_, (i + 1) * n / workers_};
  }

  double value(std::span<const double> w) const {
    const Eigen::VectorXd z = x_ * map(w);
    double acc = 0.0;
    for (Eigen::Index r = 0; r < z.size(); ++r) acc += loss(z[r], y_[r]);
    return acc / static_cast<double>(spec_.samples);
  }

  Vector gradient(std::span<const double> w) const { return rows_gradient(w, 0, spec_.samples, 1.0); }

  /// Gradient of f_i = (W/n) sum over the shard, so the average over workers
  /// is the full gradient.
  Vector local_gradient(std::size_t worker, std::span<const double> w) const {
    const auto [lo, hi] = shard(worker);
    return rows_gradient(w, lo, hi, static_cast<double>(workers_));
  }

 private:
  static Eigen::Map<const Eigen::VectorXd> map(std::span<const double> w) {
    return {w.data(), static_cast<Eigen::Index>(w.size())};
  }

  double loss(double z, double y) const {
    if (spec_.kind == ProblemKind::least_squares) return 0.5 * (z - y) * (z - y);
    const double m = y * z;
    return std::log1p(std::exp(-std::abs(m))) + std::max(-m, 0.0);
  }

  double dloss(double z, double y) const {
    if (spec_.kind == ProblemKind::least_squares) return z - y;
    const double m = y * z;
    return -y / (1.0 + std::exp(m));
  }

  Vector rows_gradient(std::span<const double> w, std::size_t lo, std::size_t hi,
                       double scale) const {
    require_same_dim(w.size(), spec_.dim, "Problem gradient");
    const auto rows = static_cast<Eigen::Index>(hi - lo);
    const auto xs = x_.middleRows(static_cast<Eigen::Index>(lo), rows);
    Eigen::VectorXd r = xs * map(w);
    for (Eigen::Index k = 0; k < rows; ++k) {
      r[k] = dloss(r[k], y_[static_cast<Eigen::Index>(lo) + k]);
    }
    const Eigen::VectorXd g = (scale / static_cast<double>(spec_.samples)) * (xs.transpose() * r);
    return Vector(g.data(), g.data() + g.size());
  }

  void generate() {
    const auto n = static_cast<Eigen::Index>(spec_.samples);
    const auto d = static_cast<Eigen::Index>(spec_.dim);
    Rng rng(derive_seed(spec_.seed, 0x70726f62ULL));
    x_.resize(n, d);
    y_.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) x_(r, c) = rng.normal();
    }
    Eigen::VectorXd truth(d);
    const double scale = spec_.kind == ProblemKind::least_squares ? 1.0 : 1.0 / std::sqrt(d);
    for (Eigen::Index c = 0; c < d; ++c) truth[c] = scale * rng.normal();
    const Eigen::VectorXd z = x_ * truth;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (spec_.kind == ProblemKind::least_squares) {
        y_[r] = z[r] + spec_.noise * rng.normal();
      } else {
        const double p = 1.0 / (1.0 + std::exp(-z[r]));
        y_[r] = rng.uniform() < p ? 1.0 : -1.0;
      }
    }
  }

  void solve_optimum() {
    const auto d = static_cast<Eigen::Index>(spec_.dim);
    const double n = static_cast<double>(spec_.samples);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    if (spec_.kind == ProblemKind::least_squares) {
      w = (x_.transpose() * x_).ldlt().solve(x_.transpose() * y_);
    } else {
      for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd z = x_ * w;
        Eigen::VectorXd r(z.size());
        Eigen::VectorXd h(z.size());
        for (Eigen::Index k = 0; k < z.size(); ++k) {
          const double p = 1.0 / (1.0 + std::exp(-z[k]));
          r[k] = dloss(z[k], y_[k]);
          h[k] = p * (1.0 - p);
        }
        const Eigen::VectorXd g = x_.transpose() * r / n;
        if (g.norm() < 1e-14) break;
        const Eigen::MatrixXd hess = x_.transpose() * h.asDiagonal() * x_ / n;
        const Eigen::VectorXd step = hess.ldlt().solve(g);
        const Vector wv(w.data(), w.data() + d);
        const double f0 = value(wv);
        double t = 1.0;
        for (int ls = 0; ls < 50; ++ls) {
          const Eigen::VectorXd cand = w - t * step;
          const Vector cv(cand.data(), cand.data() + d);
          if (value(cv) <= f0) break;
          t *= 0.5;
        }
        w -= t * step;
      }
    }
    wstar_.assign(w.data(), w.data() + d);
    const double f = value(wstar_);
    // Small slack keeps f0 - f* a valid upper bound despite rounding.
    fstar_ = f - 1e-12 * std::max(1.0, std::abs(f));
  }

  ProblemSpec spec_;
  std::size_t workers_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  double smoothness_ = 0.0;
  double fstar_ = 0.0;
  Vector wstar_;
};

// ---------------------------------------------------------------------------
// Ring AllReduce over flat buffers

struct RingStats {
  std::size_t steps = 0;
  std::uint64_t bits = 0;  // summed over all point-to-point sends
};

/// Reduce-scatter then all-gather over W equal-as-possible chunks, W-1 steps
/// each. Every worker ends with the same buffer; worker 0's is returned.
template <class T, class Op>
std::vector<T> ring_allreduce_buffers(std::vector<std::vector<T>> bufs, Op op,
                                      std::size_t elem_bits, RingStats* stats = nullptr) {
  if (bufs.empty()) throw ConfigError("ring_allreduce: no buffers");
  const std::size_t w = bufs.size();
  const std::size_t n = bufs.front().size();
  for (const auto& b : bufs) require_same_dim(b.size(), n, "ring_allreduce buffer");
  auto lo = [&](std::size_t c) { return c * n / w; };
  auto hi = [&](std::size_t c) { return (c + 1) * n / w; };
  RingStats local;

  for (std::size_t s = 0; s + 1 < w; ++s) {
    for (std::size_t i = 0; i < w; ++i) {
      const std::size_t c = (i + w - s) % w;
      auto& dst = bufs[(i + 1) % w];
      for (std::size_t k = lo(c); k < hi(c); ++k) dst[k] = op(dst[k], bufs[i][k]);
      local.bits += static_cast<std::uint64_t>(hi(c) - lo(c)) * elem_bits;
    }
    ++local.steps;
  }
  for (std::size_t s = 0; s + 1 < w; ++s) {
    for (std::size_t i = 0; i < w; ++i) {
      const std::size_t c = (i + 1 + w - s) % w;
      auto& dst = bufs[(i + 1) % w];
      for (std::size_t k = lo(c); k < hi(c); ++k) dst[k] = bufs[i][k];
      local.bits += static_cast<std::uint64_t>(hi(c) - lo(c)) * elem_bits;
    }
    ++local.steps;
  }
  if (stats) *stats = local;
  return std::move(bufs.front());
}

/// Bits moved when every worker must receive every other worker's payload.
inline std::uint64_t allgather_bits(std::span<const std::uint64_t> payload_bits) {
  const std::uint64_t total = std::accumulate(payload_bits.begin(), payload_bits.end(),
                                              std::uint64_t{0});
  return (payload_bits.size() - 1) * total;
}

namespace detail {
inline std::vector<std::size_t> ring_order(std::size_t w, std::uint64_t seed) {
  std::vector<std::size_t> order(w);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (seed != 0) std::shuffle(order.begin(), order.end(), Rng(seed).engine());
  return order;
}
}  // namespace detail

/// CASQ payloads through the ring. `ring_seed` permutes the worker order in
/// the ring (0 keeps the given order).
inline CasPayload ring_allreduce(std::span<const CasPayload> payloads, std::uint64_t ring_seed = 0,
                                 RingStats* stats = nullptr) {
  if (payloads.empty()) throw ConfigError("ring_allreduce: no payloads");
  const auto& first = payloads.front();
  std::vector<Vector> bufs;
  std::size_t workers = 0;
  for (std::size_t i : detail::ring_order(payloads.size(), ring_seed)) {
    const auto& p = payloads[i];
    detail::require_cas_compatible(first, p);
    Vector b(p.bucket_values);
    b.insert(b.end(), p.votes.begin(), p.votes.end());
    bufs.push_back(std::move(b));
    workers += p.workers;
  }
  const Vector reduced = ring_allreduce_buffers(std::move(bufs), std::plus<>(), 32, stats);
  CasPayload out = first;
  out.workers = workers;
  const std::size_t nb = out.bucket_values.size();
  std::copy(reduced.begin(), reduced.begin() + static_cast<std::ptrdiff_t>(nb),
            out.bucket_values.begin());
  for (std::size_t v = 0; v < out.votes.size(); ++v) {
    out.votes[v] = static_cast<std::uint32_t>(reduced[nb + v]);
  }
  return out;
}

inline SparsePayload ring_allreduce(std::span<const SparsePayload> payloads,
                                    std::uint64_t ring_seed = 0, RingStats* stats = nullptr) {
  if (payloads.empty()) throw ConfigError("ring_allreduce: no payloads");
  const auto& first = payloads.front();
  std::vector<Vector> tables;
  std::vector<std::vector<std::uint8_t>> masks;
  for (std::size_t i : detail::ring_order(payloads.size(), ring_seed)) {
    const auto& p = payloads[i];
    if (!(p.mask.partition == first.mask.partition) || !p.sketch.compatible_with(first.sketch)) {
      throw IncompatibleError("ring_allreduce: mismatched sparse payloads");
    }
    tables.emplace_back(p.sketch.table().begin(), p.sketch.table().end());
    masks.push_back(p.mask.flags);
  }
  RingStats ts;
  RingStats ms;
  const Vector table = ring_allreduce_buffers(std::move(tables), std::plus<>(), 32, &ts);
  const auto flags = ring_allreduce_buffers(
      std::move(masks), [](std::uint8_t a, std::uint8_t b) -> std::uint8_t { return a | b; }, 1,
      &ms);
  if (stats) *stats = RingStats{ts.steps, ts.bits + ms.bits};
  SparsePayload out = first;
  out.mask.flags = flags;
  std::copy(table.begin(), table.end(), out.sketch.table().begin());
  return out;
}

// ---------------------------------------------------------------------------
// Compressors driven by the simulator

enum class Topology : std::uint8_t { parameter_server, ring_allreduce };

enum class CompressorKind : std::uint8_t { identity, casq, qsgd, terngrad, sparse };

/// automatic: on for identity and casq, off for the unbiased baselines
/// (qsgd, terngrad, sparse), whose residual g - C(g) is not contractive and
/// would grow geometrically under feedback regardless of the step size.
enum class Feedback : std::uint8_t { automatic, on, off };

struct CompressorSpec {
  CompressorKind kind = CompressorKind::casq;
  // casq
  std::size_t num_clusters = 4;
  std::size_t total_buckets = 0;  // 0: d / 8
  std::size_t refresh_interval = kDefaultRefreshInterval;
  std::size_t sample_cap = kDefaultSampleCap;
  double max_fill = 1.0;
  // sparse
  std::size_t num_blocks = 16;
  std::size_t topk_blocks = 4;
  std::size_t rows = kDefaultSketchRows;
  double lambda = kDefaultLambda;
  Feedback feedback = Feedback::automatic;
};

inline bool uses_error_feedback(const CompressorSpec& spec) {
  if (spec.feedback != Feedback::automatic) return spec.feedback == Feedback::on;
  return spec.kind == CompressorKind::identity || spec.kind == CompressorKind::casq;
}

struct RoundOutput {
  std::vector<Vector> own;  // each worker's decode of its own payload
  Vector aggregate;         // decoded merged result, the shared update
  std::uint64_t bits = 0;   // traffic of this round
};

class SimCompressor {
 public:
  virtual ~SimCompressor() = default;
  virtual RoundOutput round(std::size_t iteration, std::span<const Vector> inputs) = 0;
};

namespace detail {

inline Vector mean_of(std::span<const Vector> vs) {
  Vector out(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[j];
  }
  for (double& x : out) x /= static_cast<double>(vs.size());
  return out;
}

inline std::uint64_t dense_bits(std::size_t dim) { return 32ULL * dim; }

class IdentityCompressor final : public SimCompressor {
 public:
  explicit IdentityCompressor(Topology topo) : topo_(topo) {}

  RoundOutput round(std::size_t, std::span<const Vector> in) override {
    RoundOutput out;
    out.own.assign(in.begin(), in.end());
    const std::size_t w = in.size();
    if (topo_ == Topology::ring_allreduce) {
      RingStats st;
      out.aggregate = ring_allreduce_buffers(std::vector<Vector>(in.begin(), in.end()),
                                             std::plus<>(), 32, &st);
      for (double& x : out.aggregate) x /= static_cast<double>(w);
      out.bits = st.bits;
    } else {
      out.aggregate = mean_of(in);
      out.bits = 2 * w * dense_bits(in.front().size());
    }
    return out;
  }

 private:
  Topology topo_;
};

class CasqSimCompressor final : public SimCompressor {
 public:
  CasqSimCompressor(CasqConfig cfg, Topology topo, std::uint64_t seed)
      : pipeline_(cfg), topo_(topo), seed_(seed) {}

  RoundOutput round(std::size_t t, std::span<const Vector> in) override {
    if (pipeline_.needs_refresh(t)) pipeline_.refresh(t, in);
    RoundOutput out;
    std::vector<CasPayload> payloads;
    payloads.reserve(in.size());
    std::uint64_t up = 0;
    for (const auto& g : in) {
      payloads.push_back(pipeline_.compress(g));
      out.own.push_back(pipeline_.decompress(payloads.back()));
      up += cas_comm_bits(payloads.back());
    }
    CasPayload merged;
    if (topo_ == Topology::ring_allreduce) {
      RingStats st;
      merged = ring_allreduce(payloads, derive_seed(seed_, t), &st);
      out.bits = st.bits;
    } else {
      merged = cas_merge(payloads);
      out.bits = up + in.size() * cas_comm_bits(merged);
    }
    out.aggregate = pipeline_.decompress(merged);
    return out;
  }

 private:
  CasqCompressor pipeline_;
  Topology topo_;
  std::uint64_t seed_;
};

class TwoLevelSimCompressor final : public SimCompressor {
 public:
  TwoLevelSimCompressor(NormKind norm, Topology topo, std::uint64_t seed)
      : norm_(norm), topo_(topo), seed_(seed) {}

  RoundOutput round(std::size_t t, std::span<const Vector> in) override {
    RoundOutput out;
    std::vector<std::uint64_t> sizes;
    for (std::size_t i = 0; i < in.size(); ++i) {
      auto r = two_level_quantize(in[i], {norm_, derive_seed(derive_seed(seed_, t), i)});
      sizes.push_back(r.bits);
      out.own.push_back(std::move(r.quantized));
    }
    out.aggregate = mean_of(out.own);
    if (topo_ == Topology::ring_allreduce) {
      out.bits = allgather_bits(sizes);
    } else {
      out.bits = std::accumulate(sizes.begin(), sizes.end(), std::uint64_t{0}) +
                 in.size() * dense_bits(in.front().size());
    }
    return out;
  }

 private:
  NormKind norm_;
  Topology topo_;
  std::uint64_t seed_;
};

class SparseSimCompressor final : public SimCompressor {
 public:
  SparseSimCompressor(SparseSketchConfig cfg, Topology topo, std::uint64_t seed)
      : cfg_(cfg), topo_(topo), seed_(seed) {}

  RoundOutput round(std::size_t t, std::span<const Vector> in) override {
    RoundOutput out;
    SparseSketchConfig cfg = cfg_;
    cfg.seed = derive_seed(seed_, t);
    std::vector<SparsePayload> payloads;
    std::uint64_t up = 0;
    for (const auto& g : in) {
      payloads.push_back(sparse_compress(g, cfg));
      out.own.push_back(sparse_decompress(payloads.back(), 1));
      up += sparse_comm_bits(payloads.back());
    }
    SparsePayload merged = payloads.front();
    if (topo_ == Topology::ring_allreduce) {
      RingStats st;
      merged = ring_allreduce(payloads, derive_seed(seed_, ~t), &st);
      out.bits = st.bits;
    } else {
      merged = sparse_merge(payloads);
      out.bits = up + in.size() * sparse_comm_bits(merged);
    }
    out.aggregate = sparse_decompress(merged, in.size());
    return out;
  }

 private:
  SparseSketchConfig cfg_;
  Topology topo_;
  std::uint64_t seed_;
};

}  // namespace detail

inline std::unique_ptr<SimCompressor> make_compressor(const CompressorSpec& spec,
                                                      std::size_t dim, Topology topo,
                                                      std::uint64_t seed) {
  switch (spec.kind) {
    case CompressorKind::identity:
      return std::make_unique<detail::IdentityCompressor>(topo);
    case CompressorKind::casq: {
      CasqConfig cfg;
      cfg.num_clusters = spec.num_clusters;
      cfg.total_buckets = spec.total_buckets != 0 ? spec.total_buckets
                                                  : std::max<std::size_t>(1, dim / 8);
      cfg.refresh_interval = spec.refresh_interval;
      cfg.sample_cap = spec.sample_cap;
      cfg.max_fill = spec.max_fill;
      cfg.seed = derive_seed(seed, 0x63617371ULL);
      return std::make_unique<detail::CasqSimCompressor>(cfg, topo, seed);
    }
    case CompressorKind::qsgd:
      return std::make_unique<detail::TwoLevelSimCompressor>(NormKind::l2, topo, seed);
    case CompressorKind::terngrad:
      return std::make_unique<detail::TwoLevelSimCompressor>(NormKind::linf, topo, seed);
    case CompressorKind::sparse: {
      SparseSketchConfig cfg;
      cfg.num_blocks = spec.num_blocks;
      cfg.topk_blocks = spec.topk_blocks;
      cfg.rows = spec.rows;
      cfg.lambda = spec.lambda;
      return std::make_unique<detail::SparseSimCompressor>(cfg, topo, seed);
    }
  }
  throw ConfigError("unknown compressor kind");
}

// ---------------------------------------------------------------------------
// Simulation

struct SimConfig {
  std::size_t workers = 4;
  std::size_t iterations = 500;
  double eta = 0.0;  // 0: 0.5 / L
  double rho = 0.0;  // 0: L
  Topology topology = Topology::parameter_server;
  CompressorSpec compressor;
  ProblemSpec problem;
  std::uint64_t seed = 0;
  double target_grad_norm_sq = 1e-3;
};

struct IterationRecord {
  std::size_t t = 0;
  double f = 0.0;             // f(w_t)
  double f_nu = 0.0;          // f(nu_t)
  double grad_norm_sq = 0.0;  // ||grad f(w_t)||^2
  Vector err_norm_sq;         // ||e_t^i||^2 per worker
  double mean_err_norm_sq = 0.0;  // ||(1/W) sum_i e_t^i||^2
  std::uint64_t bits = 0;     // traffic of step t -> t+1
};

struct BoundTerms {
  double a = 0.0;
  double b = 0.0;
  double bound = 0.0;
};

/// a = 2/(2-(rho+L)eta), b = 4 L^2 W sigma^2 (1-delta) / (rho delta^2 (2-(rho+L)eta)),
/// bound = a (f0 - fstar) / (eta (T+1)) + b eta.
inline BoundTerms eval_bound(double L, double rho, double eta, double delta, double sigma_sq,
                             std::size_t workers, std::size_t horizon, double f0, double fstar) {
  if (!(rho > 0.0) || !(eta > 0.0)) throw ConfigError("eval_bound: need rho > 0 and eta > 0");
  if (eta >= 2.0 / (rho + L)) throw ConfigError("eval_bound: need eta < 2/(rho+L)");
  if (!(delta > 0.0) || delta > 1.0) throw ConfigError("eval_bound: need delta in (0, 1]");
  const double denom = 2.0 - (rho + L) * eta;
  BoundTerms out;
  out.a = 2.0 / denom;
  out.b = 4.0 * L * L * static_cast<double>(workers) * sigma_sq * (1.0 - delta) /
          (rho * delta * delta * denom);
  out.bound = out.a * (f0 - fstar) / (eta * static_cast<double>(horizon + 1)) + out.b * eta;
  return out;
}

struct ConvergenceReport {
  std::size_t workers = 0;
  std::size_t iterations = 0;
  double L = 0.0;
  double rho = 0.0;
  double eta = 0.0;
  double f0 = 0.0;
  double fstar = 0.0;
  bool error_feedback = true;
  double delta_hat = 1.0;
  Vector sigma_hat;          // max_t ||grad f_i(w_t)|| per worker
  double sigma_sq = 0.0;     // sum_i sigma_hat_i^2 / W^2
  double recursion_residual = 0.0;
  std::size_t iterations_to_target = 0;  // iterations + 1 when never reached
  std::vector<IterationRecord> records;  // t = 0 .. T
  Vector final_w;
  std::uint64_t total_bits = 0;
};

inline constexpr double kDeltaFloor = 1e-6;
inline constexpr double kDivergenceNorm = 1e12;

/// nu = w - (1/W) sum_i e_i.
inline Vector virtual_iterate(std::span<const double> w, std::span<const Vector> errors) {
  Vector nu(w.begin(), w.end());
  if (errors.empty()) return nu;
  const double inv = 1.0 / static_cast<double>(errors.size());
  for (const auto& e : errors) {
    require_same_dim(e.size(), w.size(), "virtual_iterate");
    for (std::size_t j = 0; j < nu.size(); ++j) nu[j] -= inv * e[j];
  }
  return nu;
}

inline ConvergenceReport run_sim(const SimConfig& cfg) {
  if (cfg.workers == 0) throw ConfigError("run_sim: workers must be >= 1");
  if (cfg.iterations == 0) throw ConfigError("run_sim: iterations must be >= 1");
  ProblemSpec pspec = cfg.problem;
  pspec.seed = derive_seed(cfg.seed, pspec.seed);
  const Problem problem(pspec, cfg.workers);
  const std::size_t d = problem.dim();
  const std::size_t w = cfg.workers;

  ConvergenceReport rep;
  rep.workers = w;
  rep.iterations = cfg.iterations;
  rep.L = problem.smoothness();
  rep.eta = cfg.eta > 0.0 ? cfg.eta : 0.5 / rep.L;
  rep.rho = cfg.rho > 0.0 ? cfg.rho : rep.L;
  if (!(rep.eta > 0.0)) throw ConfigError("run_sim: learning rate must be > 0");
  rep.fstar = problem.fstar();
  rep.sigma_hat.assign(w, 0.0);
  rep.iterations_to_target = cfg.iterations + 1;
  rep.error_feedback = uses_error_feedback(cfg.compressor);

  auto compressor = make_compressor(cfg.compressor, d, cfg.topology, derive_seed(cfg.seed, 7));

  Vector omega(d, 0.0);
  std::vector<Vector> errors(w, Vector(d, 0.0));
  std::vector<Vector> grads(w);
  std::vector<Vector> tilde(w);
  double min_delta = 1.0;
  Vector prev_nu;
  Vector prev_full_grad;

  for (std::size_t t = 0; t <= cfg.iterations; ++t) {
    if (!std::isfinite(l2_norm_sq(omega)) || l2_norm(omega) > kDivergenceNorm) {
      throw DivergenceError("run_sim: iterate diverged at t=" + std::to_string(t) +
                            " (||w|| > 1e12); lower eta");
    }
    IterationRecord rec;
    rec.t = t;
    rec.f = problem.value(omega);
    const Vector full_grad = problem.gradient(omega);
    rec.grad_norm_sq = l2_norm_sq(full_grad);
    const Vector nu = virtual_iterate(omega, errors);
    rec.f_nu = problem.value(nu);
    rec.err_norm_sq.resize(w);
    for (std::size_t i = 0; i < w; ++i) rec.err_norm_sq[i] = l2_norm_sq(errors[i]);
    rec.mean_err_norm_sq = distance_sq(omega, nu);
    if (t == 0) rep.f0 = rec.f;
    if (rec.grad_norm_sq <= cfg.target_grad_norm_sq && rep.iterations_to_target > cfg.iterations) {
      rep.iterations_to_target = t;
    }
    if (t > 0) {
      double num = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double r = nu[j] - (prev_nu[j] - rep.eta * prev_full_grad[j]);
        num += r * r;
      }
      const double scale = std::max(1.0, l2_norm(nu));
      rep.recursion_residual = std::max(rep.recursion_residual, std::sqrt(num) / scale);
    }
    prev_nu = nu;
    prev_full_grad = full_grad;

    if (t == cfg.iterations) {
      rep.records.push_back(std::move(rec));
      break;
    }

    for (std::size_t i = 0; i < w; ++i) {
      grads[i] = problem.local_gradient(i, omega);
      rep.sigma_hat[i] = std::max(rep.sigma_hat[i], l2_norm(grads[i]));
      tilde[i] = ef_prepare(ErrorState{i, errors[i]}, grads[i], rep.eta);
    }
    RoundOutput out = compressor->round(t, tilde);
    rec.bits = out.bits;
    rep.total_bits += out.bits;

    Vector disc = out.aggregate;
    const Vector own_mean = detail::mean_of(out.own);
    for (std::size_t j = 0; j < d; ++j) disc[j] -= own_mean[j];
    Vector residual(d);
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        residual[j] = tilde[i][j] - out.own[i][j] - disc[j];
      }
      const double denom = l2_norm_sq(tilde[i]);
      if (denom > 0.0) min_delta = std::min(min_delta, 1.0 - l2_norm_sq(residual) / denom);
      // Without feedback the residual is dropped and e stays zero.
      if (rep.error_feedback) errors[i] = residual;
    }
    for (std::size_t j = 0; j < d; ++j) omega[j] -= out.aggregate[j];
    rep.records.push_back(std::move(rec));
  }

  rep.delta_hat = std::max(kDeltaFloor, min_delta);
  double s = 0.0;
  for (double v : rep.sigma_hat) s += v * v;
  rep.sigma_sq = s / static_cast<double>(w * w);
  rep.final_w = omega;
  return rep;
}

// ---------------------------------------------------------------------------
// Checks on a finished report

/// -eta (1 - (rho+L) eta / 2) ||grad f(w_t)||^2 + (L^2 / (2 rho)) ||nu_t - w_t||^2.
inline double delta_cas(const ConvergenceReport& rep, const IterationRecord& rec, double rho) {
  return -rep.eta * (1.0 - (rho + rep.L) * rep.eta / 2.0) * rec.grad_norm_sq +
         rep.L * rep.L / (2.0 * rho) * rec.mean_err_norm_sq;
}

/// f(nu_{t+1}) - f(nu_t) <= Delta_CAS^t for t = 0 .. T-1.
inline std::vector<bool> descent_check(const ConvergenceReport& rep, double rho) {
  std::vector<bool> ok;
  for (std::size_t t = 0; t + 1 < rep.records.size(); ++t) {
    const auto& r = rep.records[t];
    const double lhs = rep.records[t + 1].f_nu - r.f_nu;
    const double rhs = delta_cas(rep, r, rho);
    // Absolute slack for cancellation in f(nu_{t+1}) - f(nu_t).
    const double slack = 1e-12 * std::max(1.0, std::abs(r.f_nu));
    ok.push_back(lhs <= rhs + slack);
  }
  return ok;
}

struct ErrorBoundResult {
  bool checked = false;  // false when delta_hat is outside (0, 1]
  double factor = 0.0;   // 4 (1 - delta) / delta^2
  std::vector<std::vector<bool>> holds;  // [t][worker]
  bool all() const {
    for (const auto& row : holds) {
      for (bool b : row) {
        if (!b) return false;
      }
    }
    return checked;
  }
};

/// ||e_t^i / eta||^2 <= 4 (1 - delta) / delta^2 * sigma_i^2 for all t, i.
inline ErrorBoundResult error_bound_check(const ConvergenceReport& rep) {
  ErrorBoundResult out;
  const double delta = rep.delta_hat;
  if (!(delta > 0.0) || delta > 1.0) return out;
  out.checked = true;
  out.factor = 4.0 * (1.0 - delta) / (delta * delta);
  const double eta_sq = rep.eta * rep.eta;
  for (const auto& r : rep.records) {
    std::vector<bool> row;
    for (std::size_t i = 0; i < rep.workers; ++i) {
      const double bound = out.factor * rep.sigma_hat[i] * rep.sigma_hat[i];
      row.push_back(r.err_norm_sq[i] / eta_sq <= bound * (1.0 + 1e-12) + 1e-300);
    }
    out.holds.push_back(std::move(row));
  }
  return out;
}

/// Bound value at horizon T' for T' = 0 .. T, using the measured constants.
inline std::vector<BoundTerms> bound_trace(const ConvergenceReport& rep) {
  std::vector<BoundTerms> out;
  for (std::size_t h = 0; h < rep.records.size(); ++h) {
    out.push_back(eval_bound(rep.L, rep.rho, rep.eta, rep.delta_hat, rep.sigma_sq, rep.workers, h,
                             rep.f0, rep.fstar));
  }
  return out;
}

/// min_{t <= T'} ||grad f(w_t)||^2 <= bound(T') for every horizon.
inline std::vector<bool> bound_check(const ConvergenceReport& rep) {
  const auto trace = bound_trace(rep);
  std::vector<bool> ok;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t h = 0; h < rep.records.size(); ++h) {
    best = std::min(best, rep.records[h].grad_norm_sq);
    ok.push_back(best <= trace[h].bound);
  }
  return ok;
}

inline bool all_true(const std::vector<bool>& v) {
  return std::all_of(v.begin(), v.end(), [](bool b) { return b; });
}

// ---------------------------------------------------------------------------
// CSV trace: t,f,grad_norm_sq,err_norm_sq_w0..,bound,bytes

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string trace_csv(const ConvergenceReport& rep) {
  std::string out = "t,f,grad_norm_sq";
  for (std::size_t i = 0; i < rep.workers; ++i) out += ",err_norm_sq_w" + std::to_string(i);
  out += ",bound,bytes\n";
  const bool feasible = rep.eta < 2.0 / (rep.rho + rep.L);
  const auto trace = feasible ? bound_trace(rep) : std::vector<BoundTerms>{};
  for (std::size_t h = 0; h < rep.records.size(); ++h) {
    const auto& r = rep.records[h];
    out += std::to_string(r.t) + "," + detail::fmt_double(r.f) + "," +
           detail::fmt_double(r.grad_norm_sq);
    for (double e : r.err_norm_sq) out += "," + detail::fmt_double(e);
    out += "," + (feasible ? detail::fmt_double(trace[h].bound) : std::string("nan"));
    out += "," + std::to_string((r.bits + 7) / 8) + "\n";
  }
  return out;
}

}  // namespace sketchgc
