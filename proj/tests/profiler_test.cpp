/* Copyright 2026 The semcache Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "semcache/errors.hpp"
#include "semcache/pgm.hpp"
#include "semcache/profiler.hpp"
#include "test_support.hpp"

namespace semcache {
namespace {

using testing::Gen;

TEST(AggregateAttention, UniformAndIdentityGiveOneOverN) {
  for (const Matrix& a : {Matrix(Matrix::Constant(5, 5, 0.2)), Matrix(Matrix::Identity(5, 5))}) {
    for (AggregateAxis axis : {AggregateAxis::column, AggregateAxis::row}) {
      const Vector s = aggregate_attention(a, axis);
      for (int i = 0; i < 5; ++i) EXPECT_NEAR(s[i], 0.2, 1e-15);
    }
  }
}

TEST(AggregateAttention, MatchesLoopMeans) {
  Gen g(1);
  const Matrix a = testing::random_stochastic(g, 3);
  const Vector col = aggregate_attention(a, AggregateAxis::column);
  const Vector row = aggregate_attention(a, AggregateAxis::row);
  for (int j = 0; j < 3; ++j) {
    double c = 0.0, r = 0.0;
    for (int i = 0; i < 3; ++i) {
      c += a(i, j);
      r += a(j, i);
    }
    EXPECT_NEAR(col[j], c / 3.0, 1e-12);
    EXPECT_NEAR(row[j], r / 3.0, 1e-12);
  }
}

TEST(AggregateAttention, PreservesMass) {
  Gen g(2);
  for (int n : {1, 4, 17, 40}) {
    EXPECT_NEAR(aggregate_attention(testing::random_stochastic(g, n)).sum(), 1.0, 1e-9);
  }
}

TEST(AggregateAttention, RejectsNonStochastic) {
  EXPECT_THROW(aggregate_attention(Matrix::Ones(3, 3)), ContractError);
  EXPECT_THROW(aggregate_attention(Matrix::Ones(2, 3) / 3.0), DimensionError);
}

TEST(Otsu, SplitsTwoClusters) {
  const std::vector<double> v{0.1, 0.2, 0.15, 5.0, 5.2, 4.9};
  const auto t = otsu_threshold(v);
  ASSERT_TRUE(t);
  EXPECT_EQ(*t, 0.2);
  EXPECT_FALSE(otsu_threshold(std::vector<double>{3.0, 3.0, 3.0}));
}

TEST(Percentile, InterpolatesLinearly) {
  const std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(percentile(v, 0.0), 1.0);
  EXPECT_EQ(percentile(v, 100.0), 4.0);
  EXPECT_NEAR(percentile(v, 50.0), 2.5, 1e-15);
  EXPECT_NEAR(percentile(v, 90.0), 3.7, 1e-12);
}

LatentVideo block_scene(double fg, double bg) {
  const TokenGrid g{1, 6, 6};
  LatentVideo v = LatentVideo::zeros(g, 4);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      const bool inside = x >= 1 && x < 3 && y >= 2 && y < 4;
      v.tokens.row(g.index(0, y, x)).setConstant(inside ? fg : bg);
      v.tokens(g.index(0, y, x), 1) *= -1.0;
    }
  }
  return v;
}

std::vector<int> block_tokens() {
  const TokenGrid g{1, 6, 6};
  return {g.index(0, 2, 1), g.index(0, 2, 2), g.index(0, 3, 1), g.index(0, 3, 2)};
}

TEST(SegmentForeground, FindsHighMagnitudeBlock) {
  const ForegroundMask m = segment_foreground(block_scene(4.0, 0.0));
  EXPECT_FALSE(m.degenerate);
  EXPECT_EQ(m.count(), 4);
  for (int t : block_tokens()) EXPECT_TRUE(m.contains(t));
}

TEST(SegmentForeground, ConstantLatentIsDegenerate) {
  LatentVideo v = LatentVideo::zeros(TokenGrid{1, 3, 3}, 4);
  v.tokens.setConstant(2.5);
  const ForegroundMask m = segment_foreground(v);
  EXPECT_TRUE(m.degenerate);
  EXPECT_EQ(m.count(), 0);
}

TEST(SegmentForeground, InvertedContrastGivesSameMask) {
  const ForegroundMask a = segment_foreground(block_scene(4.0, 0.0));
  const ForegroundMask b = segment_foreground(block_scene(0.0, 4.0));
  EXPECT_EQ(a.bits, b.bits);
}

TEST(SegmentForeground, InvariantToPositiveScaling) {
  Gen g(3);
  LatentVideo v = block_scene(3.0, 0.5);
  for (Eigen::Index i = 0; i < v.tokens.size(); ++i) v.tokens.data()[i] += testing::uniform_real(g, -0.1, 0.1);
  const ForegroundMask a = segment_foreground(v);
  for (double k : {0.01, 7.0, 1e4}) {
    LatentVideo s = v;
    s.tokens *= k;
    EXPECT_EQ(segment_foreground(s).bits, a.bits) << "scale " << k;
  }
}

ForegroundMask mask_of(TokenGrid g, std::initializer_list<int> tokens) {
  ForegroundMask m = ForegroundMask::empty(g, MaskSource::external);
  for (int t : tokens) m.bits[static_cast<std::size_t>(t)] = 1;
  return m;
}

TEST(ComputeRAttn, SpecCases) {
  const TokenGrid g{1, 1, 8};
  Vector s(8);
  s << 0.1, 0.9, 0.1, 0.8, 0.1, 0.1, 0.1, 0.1;
  const ForegroundMask m = mask_of(g, {0, 1, 2, 3});
  EXPECT_EQ(*compute_r_attn(s, m, 0.95), 0.0);
  EXPECT_EQ(*compute_r_attn(s, m, 0.5), 0.5);
  EXPECT_EQ(*compute_r_attn(s, mask_of(g, {1, 3}), 0.5), 1.0);
  EXPECT_FALSE(compute_r_attn(s, mask_of(g, {}), 0.5));
}

TEST(ComputeRAttn, AveragesOverFramesWithForeground) {
  const TokenGrid g{3, 1, 2};
  Vector s(6);
  s << 1.0, 0.0, 1.0, 1.0, 0.0, 0.0;
  // frame 0: 1/2, frame 1: 2/2, frame 2: no foreground
  EXPECT_EQ(*compute_r_attn(s, mask_of(g, {0, 1, 2, 3}), 0.5), 0.75);
}

TEST(ComputeRAttn, RejectsLengthMismatch) {
  EXPECT_THROW(compute_r_attn(Vector::Zero(3), mask_of(TokenGrid{1, 1, 4}, {}), 0.1), DimensionError);
}

BlockProfile profile_of(std::vector<std::vector<std::optional<double>>> rows) {
  BlockProfile p(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int b = 0; b < p.blocks; ++b) {
    for (int s = 0; s < p.steps; ++s) p.at(b, s) = rows[b][s];
  }
  return p;
}

TEST(PartitionBlocks, SpecCases) {
  const BlockProfile p = profile_of({{0.8}, {0.2}});
  const BlockPartition r = partition_blocks(p, 0.5, {0, 1});
  EXPECT_EQ(r.foreground, std::vector<int>{0});
  EXPECT_EQ(r.background, std::vector<int>{1});

  const BlockPartition tie = partition_blocks(profile_of({{0.5}}), 0.5, {0, 1});
  EXPECT_EQ(tie.foreground, std::vector<int>{0});

  const BlockPartition low = partition_blocks(profile_of({{0.1}, {0.2}, {0.3}}), 0.5, {0, 1});
  EXPECT_TRUE(low.foreground.empty());
  EXPECT_EQ(low.background, (std::vector<int>{0, 1, 2}));
}

TEST(PartitionBlocks, UndefinedBlocksStayForeground) {
  const BlockProfile p = profile_of({{std::nullopt, std::nullopt}, {0.1, std::nullopt}});
  const BlockPartition r = partition_blocks(p, 0.5, {0, 2});
  EXPECT_EQ(r.foreground, std::vector<int>{0});
  EXPECT_EQ(r.background, std::vector<int>{1});
}

TEST(PartitionBlocks, UsesOnlyTheStepRange) {
  const BlockProfile p = profile_of({{0.9, 0.1, 0.1}});
  EXPECT_EQ(partition_blocks(p, 0.5, {1, 3}).background, std::vector<int>{0});
  EXPECT_EQ(partition_blocks(p, 0.5, {0, 1}).foreground, std::vector<int>{0});
  EXPECT_THROW(partition_blocks(p, 0.5, {0, 4}), ContractError);
}

TEST(PartitionBlocks, MonotoneInTau) {
  Gen g(4);
  for (int trial = 0; trial < 50; ++trial) {
    BlockProfile p(6, 4);
    for (auto& v : p.r_attn) {
      if (testing::uniform_real(g, 0, 1) > 0.2) v = testing::uniform_real(g, 0, 1);
    }
    const double lo = testing::uniform_real(g, 0, 1);
    const double hi = testing::uniform_real(g, lo, 1);
    const BlockPartition a = partition_blocks(p, lo, {0, 4});
    const BlockPartition b = partition_blocks(p, hi, {0, 4});
    for (int blk : a.background) {
      EXPECT_TRUE(std::binary_search(b.background.begin(), b.background.end(), blk));
    }
    a.validate(6);
    b.validate(6);
  }
}

TEST(BlockPartition, ValidateCatchesOverlapAndGaps) {
  EXPECT_THROW((BlockPartition{{0, 1}, {1}}).validate(2), ContractError);
  EXPECT_THROW((BlockPartition{{0}, {2}}).validate(3), ContractError);
  EXPECT_THROW((BlockPartition{{1, 0}, {}}).validate(2), ContractError);
  EXPECT_NO_THROW((BlockPartition{{1}, {0, 2}}).validate(3));
}

TEST(L1StepDistance, SpecCases) {
  const TokenGrid g{1, 2, 2};
  const LatentVideo a(g, Matrix::Ones(4, 2));
  const LatentVideo b(g, Matrix::Constant(4, 2, 3.0));
  EXPECT_EQ(l1_step_distance(std::vector<LatentVideo>{a, a}), std::vector<double>{0.0});
  EXPECT_EQ(l1_step_distance(std::vector<LatentVideo>{a, b, a}), (std::vector<double>{2.0, 2.0}));
  EXPECT_THROW(l1_step_distance(std::vector<LatentVideo>{a}), ContractError);
  EXPECT_THROW(l1_step_distance(std::vector<LatentVideo>{a, LatentVideo(g, Matrix::Ones(4, 3))}),
               DimensionError);
}

TEST(Heatmap, OmitsUndefinedAndRoundTrips) {
  Gen g(5);
  BlockProfile p(2, 2);
  p.at(0, 0) = 1.0 / 3.0;
  p.at(0, 1) = testing::uniform_real(g, 0, 1);
  p.at(1, 1) = 0.0;
  const auto rows = export_heatmap(p);
  ASSERT_EQ(rows.size(), 3u);
  const std::string csv = heatmap_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "block,step,r_attn");
  EXPECT_EQ(parse_heatmap_csv(csv), rows);
}

TEST(PartitionFile, FormatsAndParses) {
  const BlockPartition p{{0, 3}, {1, 2, 4}};
  EXPECT_EQ(format_partition(p), "F: 0,3\nB: 1,2,4\n");
  EXPECT_EQ(parse_partition(format_partition(p)), p);
  EXPECT_EQ(parse_partition("F:\nB: 0,1\n"), (BlockPartition{{}, {0, 1}}));
  EXPECT_THROW(parse_partition("F: 0\n"), Error);
}

TEST(MaskIo, LoadsPgmFramesAndScoresIoU) {
  const auto dir = std::filesystem::temp_directory_path();
  const TokenGrid g{2, 2, 2};
  write_pgm(dir / "semcache_mask0.pgm", GrayImage{2, 2, {255, 0, 0, 0}});
  write_pgm(dir / "semcache_mask1.pgm", GrayImage{2, 2, {0, 1, 0, 0}});
  const std::vector<std::filesystem::path> frames{dir / "semcache_mask0.pgm", dir / "semcache_mask1.pgm"};
  const ForegroundMask m = load_mask_frames(frames, g);
  EXPECT_EQ(m.source, MaskSource::external);
  EXPECT_TRUE(m.contains(g.index(0, 0, 0)));
  EXPECT_TRUE(m.contains(g.index(1, 0, 1)));
  EXPECT_EQ(m.count(), 2);
  EXPECT_EQ(mask_iou(m, mask_of(g, {0, 5, 6})), 2.0 / 3.0);
  EXPECT_THROW(load_mask_frames(std::vector<std::filesystem::path>{frames[0]}, g), Error);
}

TEST(ProfileTrace, ExternalMaskOverridesPca) {
  const TokenGrid g{1, 1, 4};
  StepRecord rec;
  rec.step = 0;
  rec.noise_pred = LatentVideo::zeros(g, 2);
  Matrix a = Matrix::Zero(4, 4);
  a.col(0).setOnes();
  rec.blocks.push_back({a, std::nullopt, std::nullopt});
  ProfileOptions opts;
  opts.external_mask = mask_of(g, {0});
  const BlockProfile p = profile_trace(StepTrace{rec}, 1, opts);
  ASSERT_TRUE(p.at(0, 0));
  EXPECT_EQ(*p.at(0, 0), 1.0);
  opts.external_mask = mask_of(g, {2});
  EXPECT_EQ(*profile_trace(StepTrace{rec}, 1, opts).at(0, 0), 0.0);
}

}  // namespace
}  // namespace semcache
