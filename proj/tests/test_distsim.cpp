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

#include <gtest/gtest.h>

#include <cmath>

#include "sketchgc/distsim.hpp"
#include "test_util.hpp"

namespace sketchgc {
namespace {

ProblemSpec small_problem(ProblemKind kind = ProblemKind::least_squares) {
  ProblemSpec p;
  p.kind = kind;
  p.samples = 200;
  p.dim = 16;
  p.seed = 5;
  return p;
}

TEST(ProblemSetup, LeastSquaresConstants) {
  const Problem p(small_problem(), 4);
  EXPECT_GT(p.smoothness(), 0.0);
  EXPECT_LE(p.fstar(), p.value(p.minimizer()));
  EXPECT_LT(l2_norm_sq(p.gradient(p.minimizer())), 1e-20);
  // Average of worker gradients is the full gradient.
  const Vector w = testing::random_vector(16, 3);
  Vector avg(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const Vector gi = p.local_gradient(i, w);
    for (std::size_t j = 0; j < 16; ++j) avg[j] += gi[j] / 4.0;
  }
  const Vector full = p.gradient(w);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_LE(testing::rel_diff(avg[j], full[j]), 1e-12);
}

TEST(ProblemSetup, GradientsMatchFiniteDifferences) {
  for (auto kind : {ProblemKind::least_squares, ProblemKind::logistic}) {
    const Problem p(small_problem(kind), 1);
    const Vector w = testing::random_vector(16, 8, 0.0, 0.3);
    const Vector g = p.gradient(w);
    for (std::size_t j = 0; j < 16; j += 5) {
      Vector a = w;
      Vector b = w;
      a[j] += 1e-6;
      b[j] -= 1e-6;
      EXPECT_NEAR((p.value(a) - p.value(b)) / 2e-6, g[j], 1e-6);
    }
  }
}

TEST(ProblemSetup, LogisticOptimumAndSmoothness) {
  const Problem p(small_problem(ProblemKind::logistic), 2);
  EXPECT_LT(l2_norm_sq(p.gradient(p.minimizer())), 1e-16);
  for (std::uint64_t s = 0; s < 5; ++s) {
    EXPECT_GE(p.value(testing::random_vector(16, s, 0.0, 0.5)), p.fstar());
  }
  // Logistic curvature is at most a quarter of the least-squares one on the same design.
  const Problem ls(small_problem(), 2);
  EXPECT_NEAR(p.smoothness() * 4.0, ls.smoothness(), 1e-12 * ls.smoothness());
}

TEST(RunSim, IdentitySingleWorkerIsGradientDescent) {
  SimConfig cfg;
  cfg.workers = 1;
  cfg.iterations = 60;
  cfg.problem = small_problem();
  cfg.compressor.kind = CompressorKind::identity;
  cfg.seed = 3;
  const auto rep = run_sim(cfg);

  ProblemSpec ps = cfg.problem;
  ps.seed = derive_seed(cfg.seed, ps.seed);
  const Problem p(ps, 1);
  const double eta = 0.5 / p.smoothness();
  Vector w(16, 0.0);
  for (std::size_t t = 0; t < 60; ++t) {
    const Vector g = p.gradient(w);
    for (std::size_t j = 0; j < 16; ++j) w[j] -= eta * g[j];
  }
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(rep.final_w[j], w[j], 1e-10);
  EXPECT_EQ(rep.delta_hat, 1.0);
  for (const auto& r : rep.records) EXPECT_EQ(r.err_norm_sq[0], 0.0);
  EXPECT_TRUE(all_true(descent_check(rep, rep.rho)));
}

TEST(RunSim, LosslessCasqMatchesUncompressed) {
  SimConfig cfg;
  cfg.workers = 2;
  cfg.iterations = 40;
  cfg.problem = small_problem();
  cfg.problem.dim = 4;
  cfg.compressor.kind = CompressorKind::casq;
  cfg.compressor.num_clusters = 1;
  cfg.compressor.total_buckets = 4;
  cfg.compressor.refresh_interval = 1000;
  // Pick a run seed whose single-cluster hash is a bijection on 4 entries.
  for (cfg.seed = 0;; ++cfg.seed) {
    const HashMapping h(cluster_seed(derive_seed(derive_seed(cfg.seed, 7), 0x63617371ULL), 0, 0), 4);
    std::vector<int> hit(4, 0);
    for (std::size_t i = 0; i < 4; ++i) ++hit[h.bucket(i)];
    if (std::count(hit.begin(), hit.end(), 1) == 4) break;
  }
  const auto lossless = run_sim(cfg);
  auto plain = cfg;
  plain.compressor.kind = CompressorKind::identity;
  const auto sgd = run_sim(plain);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_LE(testing::rel_diff(lossless.final_w[j], sgd.final_w[j]), 1e-12);
  }
  for (const auto& r : lossless.records) {
    for (double e : r.err_norm_sq) EXPECT_LT(e, 1e-28);
  }
}

SimConfig lossy_config() {
  SimConfig cfg;
  cfg.workers = 4;
  cfg.iterations = 200;
  cfg.problem.samples = 400;
  cfg.problem.dim = 64;
  cfg.compressor.kind = CompressorKind::casq;
  cfg.compressor.num_clusters = 4;
  cfg.seed = 11;
  return cfg;
}

TEST(RunSim, LossyCasqSatisfiesChecks) {
  const auto rep = run_sim(lossy_config());
  EXPECT_GT(rep.delta_hat, 0.0);
  EXPECT_LT(rep.delta_hat, 1.0);
  EXPECT_LE(rep.recursion_residual, 1e-8);
  EXPECT_TRUE(all_true(descent_check(rep, rep.rho)));
  EXPECT_TRUE(error_bound_check(rep).all());
  EXPECT_TRUE(all_true(bound_check(rep)));
  EXPECT_EQ(rep.records.size(), 201u);
  EXPECT_EQ(rep.records.front().f_nu, rep.records.front().f);  // nu_0 = w_0
}

TEST(RunSim, OtherCompressorsRun) {
  for (auto kind : {CompressorKind::qsgd, CompressorKind::terngrad, CompressorKind::sparse}) {
    auto cfg = lossy_config();
    cfg.iterations = 50;
    cfg.compressor.kind = kind;
    const auto rep = run_sim(cfg);
    EXPECT_FALSE(rep.error_feedback);
    for (const auto& r : rep.records) EXPECT_EQ(r.mean_err_norm_sq, 0.0);
    EXPECT_LT(rep.records.back().f, rep.f0);
    EXPECT_GT(rep.total_bits, 0u);
  }
}

TEST(RunSim, FeedbackSwitch) {
  auto cfg = lossy_config();
  cfg.iterations = 40;
  EXPECT_TRUE(run_sim(cfg).error_feedback);
  cfg.compressor.feedback = Feedback::off;
  const auto off = run_sim(cfg);
  EXPECT_FALSE(off.error_feedback);
  EXPECT_EQ(off.records.back().err_norm_sq, Vector(cfg.workers, 0.0));
  // Terngrad under forced feedback still satisfies the recursion.
  cfg.compressor.kind = CompressorKind::terngrad;
  cfg.compressor.feedback = Feedback::on;
  const auto on = run_sim(cfg);
  EXPECT_TRUE(on.error_feedback);
  EXPECT_LE(on.recursion_residual, 1e-8);
}

TEST(RunSim, Deterministic) {
  auto cfg = lossy_config();
  cfg.iterations = 70;
  EXPECT_EQ(trace_csv(run_sim(cfg)), trace_csv(run_sim(cfg)));
  cfg.topology = Topology::ring_allreduce;
  EXPECT_EQ(trace_csv(run_sim(cfg)), trace_csv(run_sim(cfg)));
}

TEST(RunSim, TopologiesAgree) {
  for (auto kind : {CompressorKind::identity, CompressorKind::casq, CompressorKind::sparse}) {
    auto cfg = lossy_config();
    cfg.iterations = 30;
    cfg.compressor.kind = kind;
    const auto ps = run_sim(cfg);
    cfg.topology = Topology::ring_allreduce;
    const auto ring = run_sim(cfg);
    for (std::size_t j = 0; j < ps.final_w.size(); ++j) {
      EXPECT_LE(testing::rel_diff(ps.final_w[j], ring.final_w[j]), 1e-9);
    }
  }
}

TEST(RunSim, DivergenceAndConfigErrors) {
  auto cfg = lossy_config();
  cfg.compressor.kind = CompressorKind::identity;
  cfg.eta = 1e3;
  cfg.iterations = 200;
  EXPECT_THROW(run_sim(cfg), DivergenceError);
  cfg.eta = 0.0;
  cfg.workers = 0;
  EXPECT_THROW(run_sim(cfg), ConfigError);
}

TEST(Bound, FormulaExamples) {
  const auto t = eval_bound(1.0, 1.0, 0.5, 0.5, 1.0, 4, 99, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(t.a, 2.0);
  EXPECT_DOUBLE_EQ(t.b, 32.0);
  EXPECT_DOUBLE_EQ(t.bound, 16.04);
  EXPECT_EQ(eval_bound(1.0, 1.0, 0.5, 1.0, 1.0, 4, 99, 1.0, 0.0).b, 0.0);
  EXPECT_NEAR(eval_bound(1.0, 1.0, 1e-9, 0.5, 1.0, 4, 9, 1.0, 0.0).a, 1.0, 1e-8);
  EXPECT_THROW(eval_bound(1.0, 1.0, 1.0, 0.5, 1.0, 4, 9, 1.0, 0.0), ConfigError);
  EXPECT_THROW(eval_bound(1.0, 1.0, 0.5, 0.0, 1.0, 4, 9, 1.0, 0.0), ConfigError);
}

TEST(Bound, ErrorFactor) {
  ConvergenceReport rep;
  rep.workers = 1;
  rep.eta = 1.0;
  rep.delta_hat = 0.5;
  rep.sigma_hat = {2.0};
  IterationRecord r;
  r.err_norm_sq = {32.0};
  rep.records.push_back(r);
  auto res = error_bound_check(rep);
  EXPECT_DOUBLE_EQ(res.factor, 8.0);
  EXPECT_TRUE(res.all());
  rep.records[0].err_norm_sq = {32.5};
  EXPECT_FALSE(error_bound_check(rep).all());
  rep.delta_hat = 1.0;
  rep.records[0].err_norm_sq = {0.0};
  EXPECT_EQ(error_bound_check(rep).factor, 0.0);
  EXPECT_TRUE(error_bound_check(rep).all());
}

TEST(Bound, LosslessDescentTermIsPure) {
  ConvergenceReport rep;
  rep.L = 2.0;
  rep.eta = 0.1;
  IterationRecord r;
  r.grad_norm_sq = 3.0;
  EXPECT_DOUBLE_EQ(delta_cas(rep, r, 2.0), -0.1 * (1.0 - 0.2) * 3.0);
}

TEST(VirtualIterate, ZeroErrorsGiveOmega) {
  const Vector w = testing::random_vector(10, 1);
  const std::vector<Vector> zeros(3, Vector(10, 0.0));
  EXPECT_EQ(virtual_iterate(w, zeros), w);
  const std::vector<Vector> errs{Vector(10, 3.0), Vector(10, -1.0)};
  const Vector nu = virtual_iterate(w, errs);
  for (std::size_t j = 0; j < 10; ++j) EXPECT_DOUBLE_EQ(nu[j], w[j] - 1.0);
}

std::vector<CasPayload> cas_payloads(std::size_t w, bool integer, std::uint64_t seed) {
  CasqConfig cfg;
  cfg.total_buckets = 20;
  cfg.seed = seed;
  CasqCompressor c(cfg);
  std::vector<Vector> gs;
  for (std::size_t i = 0; i < w; ++i) {
    gs.push_back(integer ? testing::integer_vector(120, seed + i) : testing::random_vector(120, seed + i));
  }
  c.refresh(0, gs);
  std::vector<CasPayload> ps;
  for (const auto& g : gs) ps.push_back(c.compress(g));
  return ps;
}

TEST(Ring, SingleWorkerIsIdentity) {
  const auto ps = cas_payloads(1, false, 1);
  RingStats st;
  EXPECT_EQ(ring_allreduce(ps, 0, &st), ps[0]);
  EXPECT_EQ(st.steps, 0u);
  EXPECT_EQ(st.bits, 0u);
}

TEST(Ring, IntegerPayloadsMatchSequentialMerge) {
  // Bucket means of integer vectors are not integers, so zero them out and
  // drop in integer values to test the reduction itself.
  auto ps = cas_payloads(3, true, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const Vector v = testing::integer_vector(ps[i].bucket_values.size(), 50 + i);
    ps[i].bucket_values = v;
  }
  EXPECT_EQ(ring_allreduce(ps, 0), cas_merge(ps));
  EXPECT_EQ(ring_allreduce(ps, 77), cas_merge(ps));
}

TEST(Ring, FloatPayloadsMatchWithinTolerance) {
  const auto ps = cas_payloads(8, false, 3);
  RingStats st;
  const auto ring = ring_allreduce(ps, 5, &st);
  const auto seq = cas_merge(ps);
  EXPECT_EQ(ring.votes, seq.votes);
  EXPECT_EQ(ring.workers, 8u);
  for (std::size_t b = 0; b < seq.bucket_values.size(); ++b) {
    EXPECT_LE(testing::rel_diff(ring.bucket_values[b], seq.bucket_values[b]), 1e-12);
  }
  EXPECT_EQ(st.steps, 14u);
  const std::size_t n = seq.bucket_values.size() + seq.votes.size();
  // Each of the 2(W-1) steps moves every chunk once.
  EXPECT_EQ(st.bits, 2ULL * 7 * n * 32);
}

TEST(Ring, SparsePayloads) {
  const SparseSketchConfig cfg{16, 4, 3, 0.5, 4};
  std::vector<SparsePayload> ps;
  for (std::uint64_t i = 0; i < 4; ++i) ps.push_back(sparse_compress(testing::random_vector(128, i), cfg));
  const auto ring = ring_allreduce(ps, 9);
  const auto seq = sparse_merge(ps);
  EXPECT_EQ(ring.mask, seq.mask);
  for (std::size_t k = 0; k < seq.sketch.table().size(); ++k) {
    EXPECT_LE(testing::rel_diff(ring.sketch.table()[k], seq.sketch.table()[k]), 1e-12);
  }
}

TEST(Ring, AllGatherFallbackCost) {
  const std::vector<std::uint64_t> sizes{100, 200, 300};
  EXPECT_EQ(allgather_bits(sizes), 1200u);
}

TEST(CommAccounting, CasqUnderATenthOfDense) {
  for (std::size_t n : {100'000u, 1'000'000u, 10'000'000u}) {
    EXPECT_LT(10 * cas_comm_bits(n, 4, n / 256), 32ULL * n) << n;
  }
}

TEST(TraceCsv, Layout) {
  auto cfg = lossy_config();
  cfg.iterations = 3;
  cfg.workers = 2;
  const auto csv = trace_csv(run_sim(cfg));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,f,grad_norm_sq,err_norm_sq_w0,err_norm_sq_w1,bound,bytes");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

}  // namespace
}  // namespace sketchgc
