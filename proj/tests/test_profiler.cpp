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
#include <gmpxx.h>

#include "ibimhav/attention.hpp"
#include "ibimhav/profiler.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace ibv {
namespace {

using test::big_ibmsa;
using test::big_msa;

mpz_class big(std::uint64_t v) { return mpz_class(std::to_string(v)); }

TEST(Flops, UnitAndFullScaleValues) {
  EXPECT_EQ(flops_msa(1, 1, 1, 1), 6u);
  EXPECT_EQ(big(flops_msa(32, 32, 24, 128)), big_msa(32, 32, 24, 128));
  EXPECT_EQ(flops_msa(32, 32, 24, 128), 4ull * 24576 * 16384 + 2ull * 24576 * 24576 * 128);
  EXPECT_EQ(flops_ibmsa(32, 32, 24, 128, 4, 4, 4), 4ull * 24576 * 16384 + 2ull * 64 * 24576 * 128);
}

TEST(Flops, MatchBigIntegerOracle) {
  const long cfgs[][5] = {{32, 32, 24, 128, 4}, {1, 1, 1, 1, 1}, {8, 8, 8, 16, 4}, {64, 64, 48, 96, 8},
                          {16, 12, 8, 256, 2}};
  for (const auto& c : cfgs) {
    EXPECT_EQ(big(flops_msa(c[0], c[1], c[2], c[3])), big_msa(c[0], c[1], c[2], c[3]));
    EXPECT_EQ(big(flops_ibmsa(c[0], c[1], c[2], c[3], c[4], c[4], c[4])),
              big_ibmsa(c[0], c[1], c[2], c[3], c[4], c[4], c[4]));
  }
}

TEST(Flops, PolynomialStructure) {
  const std::uint64_t n = 6 * 5 * 4;
  const std::uint64_t a = flops_msa(6, 5, 4, 10), b = flops_msa(6, 5, 4, 20);
  const std::uint64_t t1 = 4 * n * 100, t2 = 2 * n * n * 10;
  EXPECT_EQ(a, t1 + t2);
  EXPECT_EQ(b, 4 * t1 + 2 * t2);
}

TEST(Flops, WindowedNeverExceedsGlobal) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const auto h = rng.uniform_int(1, 40), w = rng.uniform_int(1, 40), d = rng.uniform_int(1, 40);
    const auto c = rng.uniform_int(1, 300);
    const auto sh = rng.uniform_int(1, h), sw = rng.uniform_int(1, w), sd = rng.uniform_int(1, d);
    const auto msa = flops_msa(h, w, d, c), ib = flops_ibmsa(h, w, d, c, sh, sw, sd);
    EXPECT_LE(ib, msa);
    if (sh * sw * sd < h * w * d) EXPECT_LT(ib, msa);
    if (sh == h && sw == w && sd == d) EXPECT_EQ(ib, msa);
  }
}

TEST(Flops, OverflowAndZeroRejected) {
  EXPECT_THROW(flops_msa(1u << 20, 1u << 20, 1u << 20, 1024), NumericalError);
  EXPECT_THROW(flops_msa(0, 1, 1, 1), ConfigError);
}

TEST(WindowCounts, Examples) {
  WindowConfig w{{4, 4, 4}};
  auto a = window_counts({8, 8, 8}, w);
  EXPECT_EQ(a.regular, 8);
  EXPECT_EQ(a.naive_shifted, 27);
  EXPECT_EQ(a.batched, 8);
  auto b = window_counts({4, 4, 4}, w);
  EXPECT_EQ(b.regular, 1);
  EXPECT_EQ(b.naive_shifted, 8);
  EXPECT_EQ(b.batched, 1);
  EXPECT_THROW(window_counts({6, 8, 8}, w), DimensionError);
  // Naive count agrees with the region count of the shifted partition.
  EXPECT_EQ(window_counts({12, 8, 4}, w).naive_shifted, shifted_region_count({12, 8, 4}, w));
}

TEST(CostReport, JsonFields) {
  auto r = cost_report({32, 32, 24}, 128, WindowConfig{{4, 4, 4}});
  auto j = r.to_json();
  EXPECT_EQ(j["flops_msa"].get<std::uint64_t>(), r.flops_msa);
  EXPECT_DOUBLE_EQ(j["ratio"].get<double>(), static_cast<double>(r.flops_ibmsa) / static_cast<double>(r.flops_msa));
  EXPECT_EQ(j["windows"]["regular"], 384);
  EXPECT_NE(r.table().find("flops"), std::string::npos);
}

// The multiply-accumulate tally of one IB-MSA layer on a divisible grid
// equals the windowed formula exactly (MAC = 1 unit).
TEST(CostReport, InstrumentedCounterMatchesFormula) {
  Rng rng(2);
  for (auto g : {Grid3{8, 8, 8}, Grid3{8, 4, 4}, Grid3{4, 4, 4}}) {
    AttentionConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.window = WindowConfig{{4, 4, 4}};
    ParamStore<float> store;
    auto p = AttentionParams<float>::create(store, "a", cfg, rng);
    Var<float> x(test::random_tensor<float>({g[0], g[1], g[2], 16}, rng));
    NoGradGuard ng;
    for (bool shifted : {false, true}) {
      MacCounter::reset();
      ib_msa(x, p, cfg, make_window_plan(g, cfg.window, shifted));
      EXPECT_EQ(MacCounter::total(), flops_ibmsa(g[0], g[1], g[2], 16, 4, 4, 4));
    }
  }
}

}  // namespace
}  // namespace ibv
