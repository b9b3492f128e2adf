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

#include "sketchgc/verify.hpp"
#include "test_util.hpp"

namespace sketchgc {
namespace {

TEST(Stats, CompensatedSumAndSampleStats) {
  Vector xs(1000, 0.1);
  xs.insert(xs.begin(), 1e16);
  xs.push_back(-1e16);
  EXPECT_NEAR(compensated_sum(xs), 100.0, 1e-6);
  const auto s = sample_stats(Vector{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.variance, 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.se, std::sqrt(5.0 / 3.0 / 4.0));
}

TEST(CountMinMoments, ZeroGradients) {
  const auto r = mc_cm_moments(64, 8, 0.0, 0.0, 1000, 1);
  EXPECT_EQ(r.empirical_mean, 0.0);
  EXPECT_EQ(r.empirical_variance, 0.0);
  EXPECT_TRUE(r.pass());
}

TEST(CountMinMoments, SingleBucketFormula) {
  EXPECT_DOUBLE_EQ(cm_loss_mean(2, 1, 0.3), 0.3);
  EXPECT_DOUBLE_EQ(cm_loss_variance(2, 1, 0.3, 0.2), 0.04);
  EXPECT_NEAR(cm_loss_mean(1024, 64, 0.1), 1.5984375, 1e-12);
}

TEST(CountMinMoments, MonteCarloMatches) {
  const auto r = mc_cm_moments(256, 16, 0.1, 0.05, 4000, 7, Tolerance{3.0, 0.1});
  EXPECT_TRUE(r.mean_pass) << r.empirical_mean << " vs " << r.theoretical_mean;
  EXPECT_TRUE(r.variance_pass) << r.empirical_variance << " vs " << r.theoretical_variance;
  EXPECT_THROW(mc_cm_moments(8, 8, 0.0, 1.0, 100, 1), ConfigError);
}

TEST(ExhaustiveCm, SmallCases) {
  const auto single = exhaustive_cm_oracle(Vector{4.0}, 3);
  EXPECT_EQ(single[0].enum_mean, 0.0);
  EXPECT_EQ(single[0].enum_variance, 0.0);

  const auto pair = exhaustive_cm_oracle(Vector{1.0, 1.0}, 2);
  EXPECT_DOUBLE_EQ(pair[0].enum_mean, 0.5);
  EXPECT_DOUBLE_EQ(pair[0].enum_variance, 0.25);

  const auto three = exhaustive_cm_oracle(Vector{1.0, 2.0, 3.0}, 2);
  EXPECT_DOUBLE_EQ(three[0].enum_mean, 2.5);
}

TEST(ExhaustiveCm, ClosedFormAgrees) {
  Rng rng(3);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t n = 1 + rng.below(6);
    const std::size_t m = 1 + rng.below(3);
    const Vector g = testing::random_vector(n, 100 + inst);
    for (const auto& e : exhaustive_cm_oracle(g, m)) {
      EXPECT_NEAR(e.enum_mean, e.formula_mean, 1e-12);
      EXPECT_NEAR(e.enum_variance, e.formula_variance, 1e-12);
    }
  }
  EXPECT_THROW(exhaustive_cm_oracle(Vector(20, 1.0), 4), ConfigError);
}

TEST(CasMoments, Formulas) {
  EXPECT_DOUBLE_EQ(cas_loss_mean(256, 16, 0.2, 0.35), -0.140625);
  EXPECT_DOUBLE_EQ(cas_loss_variance(256, 16, 0.0, 1.0), 16.0 * 255.0 / 65536.0);
}

TEST(CasMoments, InjectiveAndConstantAreLossless) {
  const auto ident = mc_cas_moments(1, 1, 0.0, 1.0, 0.7, 100, 1);
  EXPECT_EQ(ident.loss.empirical_mean, 0.0);
  EXPECT_DOUBLE_EQ(ident.delta_hat, 1.0);
  const auto flat = mc_cas_moments(64, 4, 0.5, 0.0, 0.5, 200, 2);
  EXPECT_EQ(flat.loss.empirical_mean, 0.0);
  EXPECT_EQ(flat.loss.empirical_variance, 0.0);
  EXPECT_THROW(mc_cas_moments(100, 300, 0.0, 1.0, 0.0, 100, 1), ConfigError);
}

TEST(CasMoments, MeanMatchesAndExactOracleAgreesWithEnumeration) {
  const auto r = mc_cas_moments(256, 16, 0.2, 0.1, 0.35, 20'000, 5);
  EXPECT_TRUE(r.loss.mean_pass) << r.loss.empirical_mean;
  EXPECT_TRUE(r.energy_pass);
  EXPECT_GT(r.delta_hat, 0.0);
  // Binomial oracle tracks the simulation closely.
  EXPECT_NEAR(r.loss.empirical_variance / r.exact.variance, 1.0, 0.05);

  // With sigma = 0 the binomial model is exact for a fixed vector, so it must
  // agree with full enumeration.
  const Vector g{0.9, 0.2, 0.2, 0.2, 0.2, 0.2};
  const auto ex = exhaustive_cas_oracle(g, 3, 0);
  const auto bin = cas_exact_moments(6, 3, 0.2, 0.0, 0.9);
  EXPECT_NEAR(ex.mean, bin.mean, 1e-12);
  EXPECT_NEAR(ex.variance, bin.variance, 1e-12);
}

TEST(Delta, IdentityIsOneAndTopkRatio) {
  const Compressor ident = [](std::span<const double> g, std::uint64_t) {
    return Vector(g.begin(), g.end());
  };
  const GradientSource src = [](Rng& rng) { return gaussian_mixture(64, rng); };
  const auto r = delta_estimate(ident, src, 1000, 3);
  EXPECT_EQ(r.delta_hat, 1.0);
  EXPECT_EQ(r.trials, 1000u);

  const Compressor topk = [](std::span<const double> g, std::uint64_t) {
    return sparsify(g, block_topk(g, 4, 1));
  };
  const GradientSource flat = [](Rng&) { return Vector{1, -1, 1, -1, 1, -1, 1, -1}; };
  EXPECT_NEAR(delta_estimate(topk, flat, 1000, 1).delta_hat, 0.25, 1e-12);

  const GradientSource zero = [](Rng&) { return Vector(4, 0.0); };
  EXPECT_EQ(delta_estimate(ident, zero, 1000, 1).skipped, 1000u);
}

TEST(Delta, CasqIsStrictDeltaCompressor) {
  const auto r = cas_delta_estimate(2048, 4, 200, 9);
  EXPECT_TRUE(r.pass()) << r.delta.delta_hat << " [" << r.delta.ci_low << ", " << r.delta.ci_high << "]";
  EXPECT_LE(r.max_fill_ratio, 1.0 / 16.0 + 1e-12);
}

TEST(Delta, SeedIsolation) {
  Rng a(derive_seed(5, 0));
  Rng b(derive_seed(5, 1));
  const Vector x = gaussian_mixture(1000, a);
  const Vector y = gaussian_mixture(1000, b);
  double corr = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) corr += x[i] * y[i];
  EXPECT_LT(std::abs(corr) / std::sqrt(l2_norm_sq(x) * l2_norm_sq(y)), 0.15);
  const Vector z = lognormal_mixture(500, a);
  for (double v : z) EXPECT_NE(v, 0.0);
}

TEST(Unbiasedness, SparseSketchPath) {
  const Vector g = testing::random_vector(64, 4);
  const auto r = cs_unbiasedness(g, 8, 4, 3, 0.5, 5000, 2);
  EXPECT_EQ(r.indices.size(), 32u);
  EXPECT_TRUE(r.pass()) << r.max_abs_z;
  EXPECT_GT(r.sparse_energy, 0.0);
}

}  // namespace
}  // namespace sketchgc
