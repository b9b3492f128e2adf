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

// Quantization viewed as a stochastic projection g_hat = A f(g): every entry
// is routed to one of m buckets whose representative values are f(g). The
// two-bucket instances below correspond to QSGD (l2 scale) and TernGrad
// (l-infinity scale).

#include <cstdint>
#include <span>

#include "sketchgc/core.hpp"

namespace sketchgc {

enum class NormKind : std::uint8_t { l2, linf };

struct TwoLevelQuantizer {
  NormKind norm = NormKind::l2;
  std::uint64_t seed = 0;
};

struct ProjectionResult {
  Vector quantized;
  double objective = 0.0;  // ||g - g_hat||_2^2
  std::uint64_t bits = 0;  // 2 bits per entry plus one 32-bit scale
};

/// Squared L2 distance between g and its projection.
inline double projection_objective(std::span<const double> g, std::span<const double> g_hat) {
  return distance_sq(g, g_hat);
}

inline std::uint64_t two_level_bits(std::size_t n) { return 2 * static_cast<std::uint64_t>(n) + 32; }

/// Routes g_i to sign(g_i) * scale with probability |g_i| / scale and to
/// zero otherwise, scale = ||g||_q. One uniform draw per entry in index
/// order, so the output is a pure function of (g, seed). Unbiased.
inline ProjectionResult two_level_quantize(std::span<const double> g, const TwoLevelQuantizer& q) {
  require_finite(g);
  ProjectionResult out;
  out.quantized.assign(g.size(), 0.0);
  out.bits = two_level_bits(g.size());

  const double scale = q.norm == NormKind::l2 ? l2_norm(g) : linf_norm(g);
  if (scale > 0.0) {
    Rng rng(q.seed);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double p = std::abs(g[i]) / scale;
      const double u = rng.uniform();
      if (u < p) out.quantized[i] = g[i] > 0.0 ? scale : -scale;
    }
  }
  out.objective = projection_objective(g, out.quantized);
  return out;
}

}  // namespace sketchgc
