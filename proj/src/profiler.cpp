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

#include "ibimhav/profiler.hpp"

#include <cstdio>
#include <sstream>

#include "ibimhav/errors.hpp"

namespace ibv {

namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw NumericalError("cost model overflow in 64-bit product");
  return r;
}

std::uint64_t plus(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw NumericalError("cost model overflow in 64-bit sum");
  return r;
}

void require_positive(std::initializer_list<std::uint64_t> v) {
  for (auto x : v) {
    if (x == 0) throw ConfigError("cost model dimensions must be positive");
  }
}

}  // namespace

std::uint64_t flops_msa(std::uint64_t h, std::uint64_t w, std::uint64_t d, std::uint64_t c) {
  require_positive({h, w, d, c});
  const std::uint64_t n = mul(mul(h, w), d);
  return plus(mul(mul(4, n), mul(c, c)), mul(mul(2, mul(n, n)), c));
}

std::uint64_t flops_ibmsa(std::uint64_t h, std::uint64_t w, std::uint64_t d, std::uint64_t c, std::uint64_t sh,
                          std::uint64_t sw, std::uint64_t sd) {
  require_positive({h, w, d, c, sh, sw, sd});
  const std::uint64_t n = mul(mul(h, w), d);
  const std::uint64_t p = mul(mul(sh, sw), sd);
  return plus(mul(mul(4, n), mul(c, c)), mul(mul(mul(2, p), n), c));
}

WindowCounts window_counts(const Grid3& grid, const WindowConfig& window) {
  window.validate();
  WindowCounts wc{1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    if (grid[a] < 1 || grid[a] % window.window[a] != 0) {
      throw DimensionError("grid " + grid_str(grid) + " is not divisible by window " + grid_str(window.window));
    }
    const std::int64_t n = grid[a] / window.window[a];
    wc.regular *= n;
    wc.naive_shifted *= n + 1;
  }
  wc.batched = wc.regular;
  return wc;
}

CostReport cost_report(const Grid3& grid, std::int64_t channels, const WindowConfig& window) {
  CostReport r;
  r.grid = grid;
  r.channels = channels;
  r.window = window.window;
  auto u = [](std::int64_t v) {
    if (v < 1) throw ConfigError("cost model dimensions must be positive");
    return static_cast<std::uint64_t>(v);
  };
  r.flops_msa = flops_msa(u(grid[0]), u(grid[1]), u(grid[2]), u(channels));
  r.flops_ibmsa = flops_ibmsa(u(grid[0]), u(grid[1]), u(grid[2]), u(channels), u(window.window[0]),
                              u(window.window[1]), u(window.window[2]));
  r.ratio = static_cast<double>(r.flops_ibmsa) / static_cast<double>(r.flops_msa);
  r.counts = window_counts(grid, window);
  return r;
}

nlohmann::json CostReport::to_json() const {
  return {{"grid", grid},
          {"channels", channels},
          {"window", window},
          {"flops_msa", flops_msa},
          {"flops_ibmsa", flops_ibmsa},
          {"ratio", ratio},
          {"reduction", 1.0 - ratio},
          {"windows", {{"regular", counts.regular}, {"naive_shifted", counts.naive_shifted}, {"batched", counts.batched}}}};
}

std::string CostReport::table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %s  C=%lld  window %s\n", "grid", grid_str(grid).c_str(),
                static_cast<long long>(channels), grid_str(window).c_str());
  os << line;
  std::snprintf(line, sizeof line, "%-24s %llu\n", "flops global MSA", static_cast<unsigned long long>(flops_msa));
  os << line;
  std::snprintf(line, sizeof line, "%-24s %llu\n", "flops windowed IB-MSA", static_cast<unsigned long long>(flops_ibmsa));
  os << line;
  std::snprintf(line, sizeof line, "%-24s %.6f (reduction %.2f%%)\n", "ratio", ratio, 100.0 * (1.0 - ratio));
  os << line;
  std::snprintf(line, sizeof line, "%-24s regular %lld, naive shifted %lld, batched %lld\n", "windows",
                static_cast<long long>(counts.regular), static_cast<long long>(counts.naive_shifted),
                static_cast<long long>(counts.batched));
  os << line;
  return os.str();
}

}  // namespace ibv
