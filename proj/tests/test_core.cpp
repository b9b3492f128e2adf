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

#include <set>

#include "sketchgc/core.hpp"
#include "test_util.hpp"

namespace sketchgc {
namespace {

TEST(SeededBucket, SingleBucketAlwaysZero) {
  const HashMapping h(123, 1);
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_EQ(seeded_bucket(h, i), 0u);
}

TEST(SeededBucket, Deterministic) {
  const HashMapping a(99, 17, HashKind::bucket_and_sign);
  const HashMapping b(99, 17, HashKind::bucket_and_sign);
  for (std::size_t i = 0; i < 1000; ++i) {
    EXPECT_EQ(seeded_bucket(a, i), seeded_bucket(b, i));
    EXPECT_EQ(a.sign(i), b.sign(i));
  }
}

TEST(SeededBucket, UniformChiSquare) {
  const HashMapping h(42, 8);
  std::vector<double> counts(8, 0.0);
  const std::size_t n = 100'001;
  for (std::size_t i = 0; i < n; ++i) counts[seeded_bucket(h, i)] += 1.0;
  const double expected = static_cast<double>(n) / 8.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 7 degrees of freedom, upper 0.001 quantile.
  EXPECT_LT(chi2, 24.322);
}

TEST(SeededBucket, SignsAreBalancedAndBucketOnlyIsPositive) {
  const HashMapping s(5, 4, HashKind::bucket_and_sign);
  const HashMapping p(5, 4, HashKind::bucket_only);
  int sum = 0;
  for (std::size_t i = 0; i < 10'000; ++i) {
    const int v = s.sign(i);
    EXPECT_TRUE(v == 1 || v == -1);
    sum += v;
    EXPECT_EQ(p.sign(i), 1);
  }
  EXPECT_LT(std::abs(sum), 400);
}

TEST(HashMapping, RejectsZeroBuckets) { EXPECT_THROW(HashMapping(1, 0), ConfigError); }

TEST(Norms, SmallCases) {
  EXPECT_EQ(l2_norm(Vector{0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(l2_norm(Vector{3, 4}), 5.0);
  EXPECT_EQ(linf_norm(Vector{0}), 0.0);
  EXPECT_EQ(linf_norm(Vector{-2, 1}), 2.0);
}

TEST(Norms, MatchNaiveOracles) {
  const Vector g = testing::random_vector(1000, 3);
  long double sq = 0.0L;
  double mx = 0.0;
  for (double x : g) {
    sq += static_cast<long double>(x) * x;
    if (std::abs(x) > mx) mx = std::abs(x);
  }
  EXPECT_LE(testing::rel_diff(l2_norm(g), static_cast<double>(std::sqrt(sq))), 1e-12);
  EXPECT_EQ(linf_norm(g), mx);
}

TEST(Validation, RejectsNonFinite) {
  EXPECT_THROW(require_finite(Vector{1.0, std::nan("")}), InputError);
  EXPECT_THROW(require_finite(Vector{INFINITY}), InputError);
  EXPECT_NO_THROW(require_finite(Vector{1.0, -2.0}));
}

TEST(BlockPartition, CoversRangeDisjointly) {
  for (std::size_t n = 1; n <= 200; ++n) {
    for (std::size_t b = 1; b <= n; b += (b < 10 ? 1 : 7)) {
      const BlockPartition p(n, b);
      std::vector<int> seen(n, 0);
      std::size_t prev_end = 0;
      for (std::size_t k = 0; k < b; ++k) {
        ASSERT_EQ(p.begin(k), prev_end);
        ASSERT_LE(p.begin(k), p.end(k));
        for (std::size_t i = p.begin(k); i < p.end(k); ++i) {
          ++seen[i];
          ASSERT_EQ(p.block_of(i), k);
        }
        prev_end = p.end(k);
      }
      ASSERT_EQ(prev_end, n);
      for (int s : seen) ASSERT_EQ(s, 1);
    }
  }
}

TEST(BlockPartition, ExhaustiveLargeRaggedCase) {
  const BlockPartition p(10'000, 7);
  std::size_t covered = 0;
  for (std::size_t k = 0; k < 7; ++k) covered += p.end(k) - p.begin(k);
  EXPECT_EQ(covered, 10'000u);
  EXPECT_EQ(p.block_size(), 1429u);
}

TEST(BlockPartition, RejectsBadShapes) {
  EXPECT_THROW(BlockPartition(0, 1), ConfigError);
  EXPECT_THROW(BlockPartition(4, 0), ConfigError);
  EXPECT_THROW(BlockPartition(4, 5), ConfigError);
}

TEST(Rng, ReproducibleStream) {
  Rng a(77);
  Rng b(77);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
  Rng c(78);
  EXPECT_NE(Rng(77).next(), c.next());
}

TEST(DeriveSeed, DistinctTags) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t t = 0; t < 10'000; ++t) seen.insert(derive_seed(1, t));
  EXPECT_EQ(seen.size(), 10'000u);
}

TEST(ParallelFor, VisitsEveryIndexOnceAndPropagatesErrors) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 7) throw InputError("boom");
               }),
               InputError);
}

}  // namespace
}  // namespace sketchgc
