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

#include <array>
#include <cstdint>
#include <vector>

#include "ibimhav/ops.hpp"

namespace ibv {

using Grid3 = std::array<std::int64_t, 3>;

std::int64_t volume_of(const Grid3& g);
std::string grid_str(const Grid3& g);

// Cubic or box-shaped attention window measured in tokens.
struct WindowConfig {
  Grid3 window{4, 4, 4};

  Grid3 shift() const { return {window[0] / 2, window[1] / 2, window[2] / 2}; }
  std::int64_t tokens() const { return volume_of(window); }
  void validate() const;
};

// Additive value used to suppress attention across regions and to padding.
inline constexpr double kMaskValue = -1e4;

// Token grids are row-major [h, w, d, C]. Windows are enumerated in raster
// order of the window grid; tokens inside a window in raster order as well.

// [h,w,d,C] -> [N, P, C]. Extents must be multiples of the window.
template <typename T>
Tensor<T> partition_windows(const Tensor<T>& tokens, const WindowConfig& cfg);

// Exact inverse of partition_windows.
template <typename T>
Tensor<T> merge_windows(const Tensor<T>& windows, const Grid3& grid, const WindowConfig& cfg);

// Toroidal roll: out[i] = t[(i + offset) mod n] per axis, so content moves by
// −offset. A marker at the origin shifted by (2,2,2) lands at (h−2, w−2, d−2).
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& tokens, const Grid3& offsets);

// Per-window additive masks [N, P, P] for the shifted configuration on a grid
// divisible by the window: 0 inside a pre-shift region, kMaskValue across.
// The unshifted configuration yields all-zero masks.
template <typename T>
Tensor<T> build_shift_mask(const Grid3& grid, const WindowConfig& cfg, bool shifted);

// Number of distinct regions the shifted window grid cuts the volume into.
std::int64_t shifted_region_count(const Grid3& grid, const WindowConfig& cfg);

struct RelPosIndex {
  Grid3 window{};
  std::int64_t table_size = 0;       // Π(2S−1)
  std::int64_t tokens = 0;           // P
  std::vector<std::int64_t> index;   // P×P, entry (i, j) encodes pos_j − pos_i

  std::int64_t at(std::int64_t i, std::int64_t j) const { return index[static_cast<std::size_t>(i * tokens + j)]; }
  std::int64_t central() const;
};

RelPosIndex build_rel_pos_index(const WindowConfig& cfg);

// B[h][i][j] = table[h][index(i, j)] with table: [heads, table_size].
template <typename T>
Var<T> gather_bias(const Var<T>& table, const RelPosIndex& idx);

// Gather/scatter bookkeeping that fuses zero padding to window multiples,
// the cyclic shift and the partition into one row permutation.
struct WindowPlan {
  Grid3 grid{};
  Grid3 padded{};
  WindowConfig cfg;
  bool shifted = false;
  std::int64_t num_windows = 0;
  std::int64_t tokens = 0;
  IndexList gather;   // N·P entries: source token row or −1 for padding
  IndexList scatter;  // h·w·d entries: row in the window batch
  bool needs_mask = false;
  std::vector<double> mask;  // [N, P, P] when needs_mask

  template <typename T>
  Tensor<T> mask_tensor() const;
};

WindowPlan make_window_plan(const Grid3& grid, const WindowConfig& cfg, bool shifted);

// Differentiable tokens [h,w,d,C] -> windows [N,P,C] and back.
template <typename T>
Var<T> to_windows(const Var<T>& tokens, const WindowPlan& plan);
template <typename T>
Var<T> from_windows(const Var<T>& windows, const WindowPlan& plan);

}  // namespace ibv
