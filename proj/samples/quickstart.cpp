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

// Two workers compress their gradients with CASQ, the payloads are merged
// as if on a switch, and the merged payload is decoded once.

#include <cstdio>
#include <vector>

#include "sketchgc/sketchgc.hpp"

int main() {
  using namespace sketchgc;
  const std::size_t dim = 10'000;
  const std::size_t workers = 2;

  Rng rng(1);
  std::vector<Vector> grads(workers, Vector(dim));
  for (auto& g : grads) {
    for (double& x : g) x = rng.normal(0.0, rng.uniform() < 0.1 ? 1.0 : 0.01);
  }

  CasqConfig cfg;
  cfg.num_clusters = 4;
  cfg.total_buckets = dim / 16;
  cfg.seed = 42;
  CasqCompressor casq(cfg);
  casq.refresh(0, grads);

  std::vector<CasPayload> payloads;
  for (const auto& g : grads) payloads.push_back(casq.compress(g));
  const CasPayload merged = cas_merge(payloads);
  const Vector avg = casq.decompress(merged);

  Vector exact(dim, 0.0);
  for (const auto& g : grads) {
    for (std::size_t j = 0; j < dim; ++j) exact[j] += g[j] / workers;
  }
  const double rel = distance_sq(avg, exact) / l2_norm_sq(exact);
  std::printf("payload %llu bits vs dense %llu bits, relative squared error %.4f\n",
              static_cast<unsigned long long>(cas_comm_bits(payloads.front())),
              static_cast<unsigned long long>(32ULL * dim), rel);
  return 0;
}
