/*
 * Copyright (c) 2026, The ibimhav Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "ibimhav/windowing.hpp"
#include "test_util.hpp"

namespace ibv {
namespace {

using test::random_tensor;

WindowConfig cube(std::int64_t s) { return WindowConfig{{s, s, s}}; }

TEST(Partition, FigureThreeWindowCount) {
  Tensor<float> t({8, 8, 8, 3});
  auto w = partition_windows(t, cube(4));
  EXPECT_EQ(w.shape(), (Shape{8, 64, 3}));
}

TEST(Partition, SingleWindowEqualsInput) {
  Rng rng(1);
  auto t = random_tensor<float>({4, 4, 4, 5}, rng);
  auto w = partition_windows(t, cube(4));
  ASSERT_EQ(w.shape(), (Shape{1, 64, 5}));
  EXPECT_EQ(w.storage(), t.storage());
  auto m = merge_windows(w, {4, 4, 4}, cube(4));
  EXPECT_EQ(m.storage(), t.storage());
}

TEST(Partition, NonDivisibleExtentsAskForAdaptiveResize) {
  Tensor<float> t({6, 8, 8, 1});
  try {
    partition_windows(t, cube(4));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(Partition, RoundTripProperty) {
  Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    WindowConfig cfg{{rng.uniform_int(1, 4), rng.uniform_int(1, 4), rng.uniform_int(1, 4)}};
    Grid3 g{cfg.window[0] * rng.uniform_int(1, 3), cfg.window[1] * rng.uniform_int(1, 3),
            cfg.window[2] * rng.uniform_int(1, 3)};
    auto t = random_tensor<double>({g[0], g[1], g[2], rng.uniform_int(1, 4)}, rng);
    auto w = partition_windows(t, cfg);
    EXPECT_EQ(w.dim(0), volume_of(g) / cfg.tokens());
    EXPECT_EQ(merge_windows(w, g, cfg).storage(), t.storage());
  }
}

TEST(Merge, PermutedWindowsDoNotRoundTrip) {
  Rng rng(3);
  auto t = random_tensor<float>({8, 8, 8, 2}, rng);
  auto w = partition_windows(t, cube(4));
  // Swap windows 0 and 1.
  Tensor<float> swapped = w;
  const std::int64_t block = 64 * 2;
  std::copy_n(w.ptr(), block, swapped.ptr() + block);
  std::copy_n(w.ptr() + block, block, swapped.ptr());
  EXPECT_NE(merge_windows(swapped, {8, 8, 8}, cube(4)).storage(), t.storage());
}

TEST(Merge, CountMismatchIsDimensionError) {
  Tensor<float> w({3, 64, 2});
  EXPECT_THROW(merge_windows(w, {8, 8, 8}, cube(4)), DimensionError);
}

TEST(CyclicShift, ZeroOffsetIsIdentityAndInversePairCancels) {
  Rng rng(4);
  auto t = random_tensor<float>({8, 6, 4, 3}, rng);
  EXPECT_EQ(cyclic_shift(t, {0, 0, 0}).storage(), t.storage());
  EXPECT_EQ(cyclic_shift(cyclic_shift(t, {2, 2, 2}), {-2, -2, -2}).storage(), t.storage());
}

TEST(CyclicShift, RollConvention) {
  Tensor<float> t({8, 6, 4, 1});
  t[0] = 1;
  auto s = cyclic_shift(t, {2, 2, 2});
  EXPECT_EQ(s[((8 - 2) * 6 + (6 - 2)) * 4 + (4 - 2)], 1.0f);
  float total = 0;
  for (auto v : s.data()) total += v;
  EXPECT_EQ(total, 1.0f);
}

TEST(ShiftMask, UnshiftedIsAllZero) {
  auto m = build_shift_mask<float>({8, 8, 8}, cube(4), false);
  EXPECT_EQ(m.shape(), (Shape{8, 64, 64}));
  for (auto v : m.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ShiftMask, RegionAndBatchCounts) {
  EXPECT_EQ(shifted_region_count({8, 8, 8}, cube(4)), 27);
  auto m = build_shift_mask<float>({8, 8, 8}, cube(4), true);
  EXPECT_EQ(m.dim(0), 8);
}

// Tokens attend to each other under the mask iff they come from the same
// region of the shifted partition in original coordinates.
TEST(ShiftMask, MatchesRegionMembership) {
  const Grid3 g{8, 8, 8};
  const WindowConfig cfg = cube(4);
  const WindowPlan plan = make_window_plan(g, cfg, true);
  auto seg = [](std::int64_t x) { return x < 2 ? 0 : 1 + (x - 2) / 4; };
  auto region = [&](std::int64_t row) {
    const std::int64_t x = row / 64, y = (row / 8) % 8, z = row % 8;
    return (seg(x) * 3 + seg(y)) * 3 + seg(z);
  };
  std::set<std::int64_t> regions;
  for (std::int64_t n = 0; n < plan.num_windows; ++n)
    for (std::int64_t i = 0; i < 64; ++i) {
      const auto ri = region((*plan.gather)[n * 64 + i]);
      regions.insert(ri);
      for (std::int64_t j = 0; j < 64; ++j) {
        const bool same = ri == region((*plan.gather)[n * 64 + j]);
        EXPECT_EQ(plan.mask[(n * 64 + i) * 64 + j], same ? 0.0 : kMaskValue);
      }
    }
  EXPECT_EQ(regions.size(), 27u);
}

TEST(WindowPlan, PaddingIsMaskedAndRoundTrips) {
  Rng rng(5);
  const Grid3 g{6, 5, 4};
  for (bool shifted : {false, true}) {
    const WindowPlan plan = make_window_plan(g, cube(4), shifted);
    EXPECT_EQ(plan.padded, (Grid3{8, 8, 4}));
    EXPECT_TRUE(plan.needs_mask);
    Var<double> t(random_tensor<double>({6, 5, 4, 3}, rng));
    auto back = from_windows(to_windows(t, plan), plan);
    EXPECT_EQ(back.value().storage(), t.value().storage());
    for (std::int64_t n = 0; n < plan.num_windows; ++n)
      for (std::int64_t j = 0; j < plan.tokens; ++j)
        if ((*plan.gather)[n * plan.tokens + j] < 0) {
          for (std::int64_t i = 0; i < plan.tokens; ++i)
            EXPECT_EQ(plan.mask[(n * plan.tokens + i) * plan.tokens + j], kMaskValue);
        }
  }
}

TEST(WindowPlan, FusedGatherEqualsShiftThenPartition) {
  Rng rng(6);
  auto t = random_tensor<double>({8, 8, 8, 2}, rng);
  const WindowPlan plan = make_window_plan({8, 8, 8}, cube(4), true);
  auto fused = to_windows(Var<double>(t), plan);
  auto ref = partition_windows(cyclic_shift(t, {2, 2, 2}), cube(4));
  EXPECT_EQ(fused.value().storage(), ref.storage());
}

TEST(RelPosIndex, TableSizes) {
  auto i4 = build_rel_pos_index(cube(4));
  EXPECT_EQ(i4.table_size, 343);
  EXPECT_EQ(i4.tokens, 64);
  EXPECT_EQ(i4.index.size(), 64u * 64u);
  auto i1 = build_rel_pos_index(cube(1));
  EXPECT_EQ(i1.table_size, 1);
  EXPECT_EQ(i1.index, std::vector<std::int64_t>{0});
}

TEST(RelPosIndex, ExhaustiveDisplacementOracleM2) {
  auto idx = build_rel_pos_index(cube(2));
  ASSERT_EQ(idx.table_size, 27);
  // Enumerate displacements independently and assign table slots in
  // lexicographic order of (dx, dy, dz) ∈ [−1, 1]³.
  std::map<std::array<int, 3>, std::int64_t> slot;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) slot[{dx, dy, dz}] = static_cast<std::int64_t>(slot.size());
  int pairs = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const std::array<int, 3> pi{i >> 2 & 1, i >> 1 & 1, i & 1}, pj{j >> 2 & 1, j >> 1 & 1, j & 1};
      EXPECT_EQ(idx.at(i, j), slot.at({pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]}));
      ++pairs;
    }
  EXPECT_EQ(pairs, 64);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(idx.at(i, i), idx.central());
}

TEST(RelPosIndex, NonCubicWindow) {
  auto idx = build_rel_pos_index(WindowConfig{{2, 3, 1}});
  EXPECT_EQ(idx.table_size, 3 * 5 * 1);
  std::set<std::int64_t> used(idx.index.begin(), idx.index.end());
  EXPECT_EQ(used.size(), 15u);
}

TEST(GatherBias, ZeroTableAndCentralOneHot) {
  auto idx = build_rel_pos_index(cube(2));
  Var<float> zero(Tensor<float>({2, 27}));
  auto zb = gather_bias(zero, idx).value();
  for (auto v : zb.data()) EXPECT_EQ(v, 0.0f);
  Tensor<float> onehot({1, 27});
  onehot[static_cast<std::size_t>(idx.central())] = 1;
  auto b = gather_bias(Var<float>(onehot), idx).value();
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_EQ(b[i * 8 + j], i == j ? 1.0f : 0.0f);
}

TEST(GatherBias, DependsOnlyOnDisplacement) {
  Rng rng(7);
  const WindowConfig cfg = cube(3);
  auto idx = build_rel_pos_index(cfg);
  auto b = gather_bias(Var<double>(random_tensor<double>({2, idx.table_size}, rng)), idx).value();
  const std::int64_t p = idx.tokens;
  auto pos = [](std::int64_t t) { return std::array<std::int64_t, 3>{t / 9, (t / 3) % 3, t % 3}; };
  for (std::int64_t h = 0; h < 2; ++h)
    for (std::int64_t i = 0; i < p; ++i)
      for (std::int64_t j = 0; j < p; ++j)
        for (std::int64_t k = 0; k < p; ++k)
          for (std::int64_t l = 0; l < p; ++l) {
            auto pi = pos(i), pj = pos(j), pk = pos(k), pl = pos(l);
            const bool same = pj[0] - pi[0] == pl[0] - pk[0] && pj[1] - pi[1] == pl[1] - pk[1] &&
                              pj[2] - pi[2] == pl[2] - pk[2];
            if (same) {
              ASSERT_EQ(b[(h * p + i) * p + j], b[(h * p + k) * p + l]);
            } else if (h == 0) {
              ASSERT_NE(b[(h * p + i) * p + j], b[(h * p + k) * p + l]);
            }
          }
}

}  // namespace
}  // namespace ibv
