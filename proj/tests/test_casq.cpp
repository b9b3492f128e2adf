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

#include <array>
#include <cmath>
#include <string>

#include "sketchgc/casq.hpp"
#include "test_util.hpp"

namespace sketchgc {
namespace {

ClusterAssignment labelled(std::vector<std::uint32_t> labels, std::size_t k) {
  ClusterAssignment a;
  a.labels = std::move(labels);
  a.num_clusters = k;
  return a;
}

BucketAllocation fixed(std::vector<std::size_t> m) {
  BucketAllocation b;
  b.buckets = std::move(m);
  b.budget = b.total();
  return b;
}

bool injective(const HashMapping& h, std::size_t n) {
  std::vector<int> hit(h.buckets, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (hit[h.bucket(i)]++ > 0) return false;
  }
  return true;
}

TEST(CasCompress, SingleClusterInjectiveIsExact) {
  const Vector g{0.5, -1.25, 3.0, 7.5, -2.0};
  for (std::uint64_t seed = 0;; ++seed) {
    if (!injective(HashMapping(cluster_seed(seed, 0, 0), 5), 5)) continue;
    const auto p = cas_compress(g, labelled(std::vector<std::uint32_t>(5, 0), 1), fixed({5}), seed, 0);
    EXPECT_EQ(cas_decompress(p, seed), g);
    break;
  }
}

TEST(CasCompress, ConstantClusterIsExact) {
  const Vector g{2.5, 2.5, 2.5, -1.0, 2.5, -1.0};
  const auto a = labelled({0, 0, 0, 1, 0, 1}, 2);
  const auto p = cas_compress(g, a, fixed({3, 1}), 9, 4);
  const Vector back = cas_decompress(p, 9);
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_EQ(back[j], g[j]);
  for (std::size_t b = 0; b < 3; ++b) {
    const double m = p.mean(0, b);
    EXPECT_TRUE(m == 0.0 || m == 2.5);
  }
}

TEST(CasCompress, BucketMeansMatchMaterializedProjection) {
  const Vector g{1.0, -2.0, 3.5, -4.0, 0.25, 6.0};
  const auto a = labelled({0, 1, 0, 1, 0, 1}, 2);
  const std::uint64_t seed = 31;
  const auto p = cas_compress(g, a, fixed({2, 2}), seed, 7);
  for (std::uint32_t k = 0; k < 2; ++k) {
    const HashMapping h(cluster_seed(seed, 7, k), 2);
    // A_k: rows are entries of cluster k, columns are buckets.
    std::vector<std::array<double, 2>> ak;
    Vector vals;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (a.labels[j] != k) continue;
      std::array<double, 2> row{0.0, 0.0};
      row[h.bucket(j)] = 1.0;
      ak.push_back(row);
      vals.push_back(g[j]);
    }
    for (std::size_t b = 0; b < 2; ++b) {
      double gram = 0.0;
      double atx = 0.0;
      for (std::size_t r = 0; r < ak.size(); ++r) {
        gram += ak[r][b] * ak[r][b];
        atx += ak[r][b] * vals[r];
      }
      EXPECT_DOUBLE_EQ(p.mean(k, b), gram > 0.0 ? atx / gram : 0.0);
    }
  }
}

TEST(CasCompress, RejectsBadInput) {
  const auto a = labelled({0, 0}, 1);
  EXPECT_THROW(cas_compress(Vector{1.0}, a, fixed({1}), 0, 0), DimensionError);
  EXPECT_THROW(cas_compress(Vector{1.0, NAN}, a, fixed({1}), 0, 0), InputError);
}

TEST(CasMerge, SingleIsIdentityAndEqualPairsAverage) {
  const Vector g = testing::random_vector(40, 3);
  std::vector<std::uint32_t> labels(40);
  for (std::size_t j = 0; j < 40; ++j) labels[j] = g[j] > 0.0;
  const auto p = cas_compress(g, labelled(labels, 2), fixed({4, 4}), 5, 0);
  const std::vector<CasPayload> one{p};
  EXPECT_EQ(cas_merge(one), p);

  const std::vector<CasPayload> two{p, p};
  const auto m = cas_merge(two);
  EXPECT_EQ(m.workers, 2u);
  for (std::uint32_t k = 0; k < 2; ++k) {
    for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(m.mean(k, b), p.mean(k, b));
  }
  for (std::size_t j = 0; j < 40; ++j) {
    EXPECT_EQ(m.vote(j, labels[j]), 2u);
    EXPECT_EQ(m.vote(j, 1 - labels[j]), 0u);
  }
}

TEST(CasMerge, ThreeWorkersMatchNaiveMean) {
  std::vector<CasPayload> ps;
  for (std::uint64_t w = 0; w < 3; ++w) {
    const Vector g = testing::random_vector(60, 10 + w);
    std::vector<std::uint32_t> labels(60);
    for (std::size_t j = 0; j < 60; ++j) labels[j] = static_cast<std::uint32_t>((j + w) % 3);
    ps.push_back(cas_compress(g, labelled(labels, 3), fixed({3, 5, 2}), 77, 1));
  }
  const auto m = cas_merge(ps);
  EXPECT_EQ(m.workers, 3u);
  for (std::uint32_t k = 0; k < 3; ++k) {
    for (std::size_t b = 0; b < m.bucket_counts[k]; ++b) {
      const double naive = (ps[0].mean(k, b) + ps[1].mean(k, b) + ps[2].mean(k, b)) / 3.0;
      EXPECT_LE(testing::rel_diff(m.mean(k, b), naive), 1e-12);
    }
  }
  for (std::size_t j = 0; j < 60; ++j) {
    for (std::uint32_t k = 0; k < 3; ++k) EXPECT_EQ(m.vote(j, k), 1u);
  }
}

TEST(CasMerge, LinearOnIntegerVectors) {
  const auto a = labelled(std::vector<std::uint32_t>(100, 0), 1);
  const Vector g1 = testing::integer_vector(100, 1);
  const Vector g2 = testing::integer_vector(100, 2);
  const auto p1 = cas_compress(g1, a, fixed({10}), 3, 0);
  const auto p2 = cas_compress(g2, a, fixed({10}), 3, 0);
  const std::vector<CasPayload> both{p1, p2};
  const auto m = cas_merge(both);
  for (std::size_t b = 0; b < 10; ++b) {
    EXPECT_EQ(m.bucket_values[b], p1.bucket_values[b] + p2.bucket_values[b]);
  }
}

TEST(CasMerge, MismatchNamesField) {
  const Vector g(8, 1.0);
  const auto a = labelled(std::vector<std::uint32_t>(8, 0), 1);
  const auto p = cas_compress(g, a, fixed({4}), 3, 0);
  auto expect_field = [&](const CasPayload& q, const std::string& field) {
    const std::vector<CasPayload> both{p, q};
    try {
      cas_merge(both);
      ADD_FAILURE() << "no error for " << field;
    } catch (const IncompatibleError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_field(cas_compress(g, a, fixed({4}), 3, 1), "window_id");
  expect_field(cas_compress(g, a, fixed({2}), 3, 0), "bucket_counts");
  expect_field(cas_compress(Vector(9, 1.0), labelled(std::vector<std::uint32_t>(9, 0), 1),
                            fixed({4}), 3, 0),
               "dim");
  expect_field(cas_compress(g, labelled(std::vector<std::uint32_t>(8, 0), 2), fixed({4, 1}), 3, 0),
               "num_clusters");
}

TEST(CasDecompress, SingleWorkerReadsOwnBucket) {
  const Vector g = testing::random_vector(30, 4);
  std::vector<std::uint32_t> labels(30);
  for (std::size_t j = 0; j < 30; ++j) labels[j] = j % 2;
  const auto p = cas_compress(g, labelled(labels, 2), fixed({3, 3}), 12, 2);
  const Vector back = cas_decompress(p, 12);
  for (std::size_t j = 0; j < 30; ++j) {
    const HashMapping h(cluster_seed(12, 2, labels[j]), 3);
    EXPECT_EQ(back[j], p.mean(labels[j], h.bucket(j)));
  }
}

TEST(CasDecompress, AgreeingWorkersReadMergedMean) {
  std::vector<std::uint32_t> labels(24);
  for (std::size_t j = 0; j < 24; ++j) labels[j] = j % 3 == 0;
  std::vector<CasPayload> ps;
  for (std::uint64_t w = 0; w < 4; ++w) {
    ps.push_back(cas_compress(testing::random_vector(24, 50 + w), labelled(labels, 2),
                              fixed({4, 2}), 6, 0));
  }
  const auto m = cas_merge(ps);
  const Vector back = cas_decompress(m, 6);
  Vector avg(24, 0.0);
  for (const auto& p : ps) {
    const Vector d = cas_decompress(p, 6);
    for (std::size_t j = 0; j < 24; ++j) avg[j] += d[j] / 4.0;
  }
  for (std::size_t j = 0; j < 24; ++j) {
    const HashMapping h(cluster_seed(6, 0, labels[j]), m.bucket_counts[labels[j]]);
    EXPECT_LE(testing::rel_diff(back[j], m.mean(labels[j], h.bucket(j))), 1e-15);
    EXPECT_LE(testing::rel_diff(back[j], avg[j]), 1e-12);
  }
}

TEST(CasDecompress, DisagreeingPairAveragesBothClusters) {
  const Vector g1 = testing::random_vector(10, 70);
  const Vector g2 = testing::random_vector(10, 71);
  std::vector<std::uint32_t> l1(10, 0);
  std::vector<std::uint32_t> l2(10, 0);
  l2[3] = 1;
  const auto p1 = cas_compress(g1, labelled(l1, 2), fixed({2, 2}), 8, 0);
  const auto p2 = cas_compress(g2, labelled(l2, 2), fixed({2, 2}), 8, 0);
  const std::vector<CasPayload> both{p1, p2};
  const auto m = cas_merge(both);
  const HashMapping h0(cluster_seed(8, 0, 0), 2);
  const HashMapping h1(cluster_seed(8, 0, 1), 2);
  const double expect = (m.mean(0, h0.bucket(3)) + m.mean(1, h1.bucket(3))) / 2.0;
  EXPECT_DOUBLE_EQ(cas_decompress(m, 8)[3], expect);
}

TEST(CasSerialize, RoundTripIsBitExact) {
  const Vector g = testing::integer_vector(50, 5);
  std::vector<std::uint32_t> labels(50);
  for (std::size_t j = 0; j < 50; ++j) labels[j] = static_cast<std::uint32_t>(j % 3);
  const auto p = cas_compress(g, labelled(labels, 3), fixed({4, 4, 4}), 1, 2);
  const auto bytes = serialize(p);
  const auto back = deserialize_cas(bytes);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(back.labels(), labels);
  EXPECT_EQ(bytes.size(), (cas_comm_bits(p) + 7) / 8);

  const std::vector<CasPayload> three{p, p, p};
  const auto m = cas_merge(three);
  const auto mbytes = serialize(m);
  EXPECT_EQ(serialize(deserialize_cas(mbytes)), mbytes);
  EXPECT_EQ(mbytes.size() * 8, cas_comm_bits(m));
}

TEST(CasSerialize, RejectsCorruption) {
  const auto p = cas_compress(Vector{1, 2, 3}, labelled({0, 1, 1}, 2), fixed({1, 1}), 0, 0);
  auto bytes = serialize(p);
  bytes.push_back(0);
  EXPECT_THROW(deserialize_cas(bytes), FormatError);
  bytes = serialize(p);
  bytes[2] = 'X';
  EXPECT_THROW(deserialize_cas(bytes), FormatError);
}

TEST(CasBits, Accounting) {
  EXPECT_EQ(cas_assignment_bits(1000, 1, 1), 0u);
  const auto bits = cas_comm_bits(1'000'000, 4, 4096);
  EXPECT_EQ(bits, 2'000'000u + 131'072u + cas_header_bits(4));
  EXPECT_NEAR(static_cast<double>(bits), 2.13e6, 0.01e6);
  EXPECT_NEAR(3.2e7 / static_cast<double>(bits), 15.0, 0.1);
  EXPECT_DOUBLE_EQ(cas_merged_binary_nominal_ratio(16), 1.0 / 8.0);
  EXPECT_EQ(cas_merged_binary_bits(1000, 16, 10), 1000u * 5 + 320);
}

CasqConfig small_config() {
  CasqConfig cfg;
  cfg.num_clusters = 4;
  cfg.total_buckets = 32;
  cfg.refresh_interval = 8;
  cfg.seed = 99;
  return cfg;
}

TEST(CasqCompressor, RefreshWindowsAndMergeability) {
  CasqCompressor c(small_config());
  EXPECT_TRUE(c.needs_refresh(3));
  EXPECT_THROW(c.compress(Vector(4, 1.0)), ConfigError);
  const std::vector<Vector> inputs{testing::random_vector(500, 1), testing::random_vector(500, 2)};
  c.refresh(0, inputs);
  EXPECT_FALSE(c.needs_refresh(5));
  EXPECT_TRUE(c.needs_refresh(8));
  EXPECT_EQ(c.allocation().total(), 32u);

  // Payloads from different iterations of the same window merge.
  const auto a = c.compress(testing::random_vector(500, 3));
  const auto b = c.compress(testing::random_vector(500, 4));
  const std::vector<CasPayload> both{a, b};
  EXPECT_NO_THROW(cas_merge(both));

  c.refresh(8, inputs);
  EXPECT_EQ(c.window_id(), 1u);
  const std::vector<CasPayload> cross{a, c.compress(testing::random_vector(500, 3))};
  EXPECT_THROW(cas_merge(cross), IncompatibleError);
}

TEST(CasqCompressor, ConfigValidation) {
  auto cfg = small_config();
  cfg.num_clusters = 0;
  EXPECT_THROW(CasqCompressor{cfg}, ConfigError);
  cfg = small_config();
  cfg.refresh_interval = 0;
  EXPECT_THROW(CasqCompressor{cfg}, ConfigError);
}

TEST(ErrorFeedback, LosslessPipelineLeavesNoError) {
  CasqConfig cfg;
  cfg.num_clusters = 1;
  cfg.total_buckets = 6;
  for (cfg.seed = 0;; ++cfg.seed) {
    if (injective(HashMapping(cluster_seed(cfg.seed, 0, 0), 6), 6)) break;
  }
  CasqCompressor c(cfg);
  const std::vector<Vector> init{testing::random_vector(6, 1)};
  c.refresh(0, init);
  auto state = ErrorState::zeros(6);
  for (int t = 0; t < 5; ++t) {
    const Vector g = testing::random_vector(6, 100 + t);
    const auto step = ef_step(state, g, 0.1, c);
    for (double e : step.next.error) EXPECT_EQ(e, 0.0);
    state = step.next;
  }
}

TEST(ErrorFeedback, ZeroGradientStaysZero) {
  CasqCompressor c(small_config());
  const std::vector<Vector> init{testing::random_vector(64, 1)};
  c.refresh(0, init);
  const auto step = ef_step(ErrorState::zeros(64), Vector(64, 0.0), 0.5, c);
  for (double v : step.decoded) EXPECT_EQ(v, 0.0);
  for (double e : step.next.error) EXPECT_EQ(e, 0.0);
}

TEST(ErrorFeedback, CarriesResidual) {
  CasqCompressor c(small_config());
  const Vector g = testing::random_vector(400, 5);
  const std::vector<Vector> init{g};
  c.refresh(0, init);
  const auto s1 = ef_step(ErrorState::zeros(400), g, 0.5, c);
  for (std::size_t i = 0; i < 400; ++i) {
    EXPECT_DOUBLE_EQ(s1.g_tilde[i], 0.5 * g[i]);
    EXPECT_DOUBLE_EQ(s1.next.error[i], s1.g_tilde[i] - s1.decoded[i]);
  }
  const auto s2 = ef_step(s1.next, g, 0.5, c);
  for (std::size_t i = 0; i < 400; ++i) {
    EXPECT_DOUBLE_EQ(s2.g_tilde[i], 0.5 * g[i] + s1.next.error[i]);
  }
  EXPECT_THROW(ef_prepare(ErrorState::zeros(3), Vector(3, 1.0), 0.0), ConfigError);
}

}  // namespace
}  // namespace sketchgc
