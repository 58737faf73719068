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

#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "ibimhav/windowing.hpp"

namespace ibv {

// Exact unsigned evaluation; overflow raises NumericalError.
// Global attention: 4hwdC² + 2(hwd)²C.
std::uint64_t flops_msa(std::uint64_t h, std::uint64_t w, std::uint64_t d, std::uint64_t c);
// Windowed attention: 4hwdC² + 2·S_H·S_W·S_D·hwd·C.
std::uint64_t flops_ibmsa(std::uint64_t h, std::uint64_t w, std::uint64_t d, std::uint64_t c, std::uint64_t sh,
                          std::uint64_t sw, std::uint64_t sd);

struct WindowCounts {
  std::int64_t regular = 0, naive_shifted = 0, batched = 0;
};

// regular = Π(grid/window); naive_shifted = Π(grid/window + 1); batched = regular.
WindowCounts window_counts(const Grid3& grid, const WindowConfig& window);

struct CostReport {
  Grid3 grid{};
  std::int64_t channels = 0;
  Grid3 window{};
  std::uint64_t flops_msa = 0, flops_ibmsa = 0;
  double ratio = 0.0;
  WindowCounts counts;

  nlohmann::json to_json() const;
  std::string table() const;
};

CostReport cost_report(const Grid3& grid, std::int64_t channels, const WindowConfig& window);

}  // namespace ibv
