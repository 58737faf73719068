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

#include "ibimhav/windowing.hpp"

#include <sstream>

namespace ibv {

std::int64_t volume_of(const Grid3& g) { return g[0] * g[1] * g[2]; }

std::string grid_str(const Grid3& g) {
  std::ostringstream os;
  os << '(' << g[0] << ',' << g[1] << ',' << g[2] << ')';
  return os.str();
}

void WindowConfig::validate() const {
  for (auto s : window) {
    if (s < 1) throw ConfigError("window extents must be >= 1, got " + grid_str(window));
  }
}

namespace {

void require_divisible(const Grid3& grid, const WindowConfig& cfg) {
  for (int a = 0; a < 3; ++a) {
    if (grid[a] < 1 || grid[a] % cfg.window[a] != 0) {
      throw DimensionError("token grid " + grid_str(grid) + " is not divisible by window " + grid_str(cfg.window) +
                           "; pad the tokens (or adapt the crop size) to a multiple of the window");
    }
  }
}

Grid3 grid_of(const Shape& s) {
  if (s.size() != 4) throw DimensionError("expected token tensor [h,w,d,C], got " + shape_str(s));
  return {s[0], s[1], s[2]};
}

// Token row for every (window, position) of an unshifted, unpadded partition.
std::vector<std::int64_t> partition_rows(const Grid3& grid, const WindowConfig& cfg) {
  const Grid3 nw{grid[0] / cfg.window[0], grid[1] / cfg.window[1], grid[2] / cfg.window[2]};
  std::vector<std::int64_t> rows;
  rows.reserve(static_cast<std::size_t>(volume_of(grid)));
  for (std::int64_t wa = 0; wa < nw[0]; ++wa)
    for (std::int64_t wb = 0; wb < nw[1]; ++wb)
      for (std::int64_t wc = 0; wc < nw[2]; ++wc)
        for (std::int64_t a = 0; a < cfg.window[0]; ++a)
          for (std::int64_t b = 0; b < cfg.window[1]; ++b)
            for (std::int64_t c = 0; c < cfg.window[2]; ++c) {
              const std::int64_t x = wa * cfg.window[0] + a, y = wb * cfg.window[1] + b, z = wc * cfg.window[2] + c;
              rows.push_back((x * grid[1] + y) * grid[2] + z);
            }
  return rows;
}

// Region label along one axis of the rolled grid.
std::int64_t axis_region(std::int64_t i, std::int64_t n, std::int64_t win, std::int64_t shift) {
  if (shift == 0) return 0;
  if (i < n - win) return 0;
  if (i < n - shift) return 1;
  return 2;
}

}  // namespace

template <typename T>
Tensor<T> partition_windows(const Tensor<T>& tokens, const WindowConfig& cfg) {
  cfg.validate();
  const Grid3 grid = grid_of(tokens.shape());
  require_divisible(grid, cfg);
  const std::int64_t c = tokens.dim(3);
  const auto rows = partition_rows(grid, cfg);
  const std::int64_t p = cfg.tokens();
  Tensor<T> out(Shape{volume_of(grid) / p, p, c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(tokens.ptr() + rows[r] * c, c, out.ptr() + static_cast<std::int64_t>(r) * c);
  }
  return out;
}

template <typename T>
Tensor<T> merge_windows(const Tensor<T>& windows, const Grid3& grid, const WindowConfig& cfg) {
  cfg.validate();
  require_divisible(grid, cfg);
  if (windows.rank() != 3 || windows.dim(1) != cfg.tokens() || windows.dim(0) * windows.dim(1) != volume_of(grid)) {
    throw DimensionError("merge_windows: window batch " + shape_str(windows.shape()) + " does not tile grid " +
                         grid_str(grid) + " with window " + grid_str(cfg.window));
  }
  const std::int64_t c = windows.dim(2);
  const auto rows = partition_rows(grid, cfg);
  Tensor<T> out(Shape{grid[0], grid[1], grid[2], c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(windows.ptr() + static_cast<std::int64_t>(r) * c, c, out.ptr() + rows[r] * c);
  }
  return out;
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& tokens, const Grid3& offsets) {
  const Grid3 g = grid_of(tokens.shape());
  const std::int64_t c = tokens.dim(3);
  Tensor<T> out(tokens.shape());
  auto wrap = [](std::int64_t i, std::int64_t n) { return ((i % n) + n) % n; };
  for (std::int64_t x = 0; x < g[0]; ++x)
    for (std::int64_t y = 0; y < g[1]; ++y)
      for (std::int64_t z = 0; z < g[2]; ++z) {
        const std::int64_t sx = wrap(x + offsets[0], g[0]), sy = wrap(y + offsets[1], g[1]),
                           sz = wrap(z + offsets[2], g[2]);
        std::copy_n(tokens.ptr() + ((sx * g[1] + sy) * g[2] + sz) * c, c, out.ptr() + ((x * g[1] + y) * g[2] + z) * c);
      }
  return out;
}

std::int64_t shifted_region_count(const Grid3& grid, const WindowConfig& cfg) {
  require_divisible(grid, cfg);
  const Grid3 s = cfg.shift();
  std::int64_t n = 1;
  for (int a = 0; a < 3; ++a) n *= grid[a] / cfg.window[a] + (s[a] > 0 ? 1 : 0);
  return n;
}

WindowPlan make_window_plan(const Grid3& grid, const WindowConfig& cfg, bool shifted) {
  cfg.validate();
  WindowPlan plan;
  plan.grid = grid;
  plan.cfg = cfg;
  plan.shifted = shifted;
  bool padded_any = false;
  for (int a = 0; a < 3; ++a) {
    if (grid[a] < 1) throw DimensionError("empty token grid " + grid_str(grid));
    plan.padded[a] = (grid[a] + cfg.window[a] - 1) / cfg.window[a] * cfg.window[a];
    padded_any = padded_any || plan.padded[a] != grid[a];
  }
  const Grid3 s = shifted ? cfg.shift() : Grid3{0, 0, 0};
  const Grid3& pg = plan.padded;
  const Grid3& win = cfg.window;
  const Grid3 nw{pg[0] / win[0], pg[1] / win[1], pg[2] / win[2]};
  plan.num_windows = volume_of(nw);
  plan.tokens = cfg.tokens();
  const std::int64_t p = plan.tokens;

  std::vector<std::int64_t> gather;
  std::vector<std::int64_t> region;
  gather.reserve(static_cast<std::size_t>(plan.num_windows * p));
  region.reserve(gather.capacity());
  for (std::int64_t wa = 0; wa < nw[0]; ++wa)
    for (std::int64_t wb = 0; wb < nw[1]; ++wb)
      for (std::int64_t wc = 0; wc < nw[2]; ++wc)
        for (std::int64_t a = 0; a < win[0]; ++a)
          for (std::int64_t b = 0; b < win[1]; ++b)
            for (std::int64_t c = 0; c < win[2]; ++c) {
              const Grid3 r{wa * win[0] + a, wb * win[1] + b, wc * win[2] + c};  // rolled, padded
              Grid3 o{};
              bool pad = false;
              for (int ax = 0; ax < 3; ++ax) {
                o[ax] = (r[ax] + s[ax]) % pg[ax];
                pad = pad || o[ax] >= grid[ax];
              }
              gather.push_back(pad ? -1 : (o[0] * grid[1] + o[1]) * grid[2] + o[2]);
              region.push_back((axis_region(r[0], pg[0], win[0], s[0]) * 3 + axis_region(r[1], pg[1], win[1], s[1])) * 3 +
                               axis_region(r[2], pg[2], win[2], s[2]));
            }

  std::vector<std::int64_t> scatter(static_cast<std::size_t>(volume_of(grid)), -1);
  for (std::size_t i = 0; i < gather.size(); ++i) {
    if (gather[i] >= 0) scatter[static_cast<std::size_t>(gather[i])] = static_cast<std::int64_t>(i);
  }

  const bool any_shift = s[0] > 0 || s[1] > 0 || s[2] > 0;
  plan.needs_mask = any_shift || padded_any;
  if (plan.needs_mask) {
    plan.mask.assign(static_cast<std::size_t>(plan.num_windows * p * p), 0.0);
    for (std::int64_t n = 0; n < plan.num_windows; ++n)
      for (std::int64_t i = 0; i < p; ++i)
        for (std::int64_t j = 0; j < p; ++j) {
          const std::size_t qi = static_cast<std::size_t>(n * p + i), kj = static_cast<std::size_t>(n * p + j);
          if (region[qi] != region[kj] || gather[kj] < 0) plan.mask[(n * p + i) * p + j] = kMaskValue;
        }
  }
  plan.gather = std::make_shared<const std::vector<std::int64_t>>(std::move(gather));
  plan.scatter = std::make_shared<const std::vector<std::int64_t>>(std::move(scatter));
  return plan;
}

template <typename T>
Tensor<T> WindowPlan::mask_tensor() const {
  if (!needs_mask) return Tensor<T>();
  return Tensor<T>(Shape{num_windows, tokens, tokens}, std::vector<T>(mask.begin(), mask.end()));
}

template <typename T>
Tensor<T> build_shift_mask(const Grid3& grid, const WindowConfig& cfg, bool shifted) {
  require_divisible(grid, cfg);
  const WindowPlan plan = make_window_plan(grid, cfg, shifted);
  if (!plan.needs_mask) return Tensor<T>(Shape{plan.num_windows, plan.tokens, plan.tokens});
  return plan.mask_tensor<T>();
}

std::int64_t RelPosIndex::central() const {
  std::int64_t c = 0;
  for (int a = 0; a < 3; ++a) c = c * (2 * window[a] - 1) + (window[a] - 1);
  return c;
}

RelPosIndex build_rel_pos_index(const WindowConfig& cfg) {
  cfg.validate();
  RelPosIndex idx;
  idx.window = cfg.window;
  const Grid3& w = cfg.window;
  idx.table_size = (2 * w[0] - 1) * (2 * w[1] - 1) * (2 * w[2] - 1);
  idx.tokens = cfg.tokens();
  const std::int64_t p = idx.tokens;
  idx.index.resize(static_cast<std::size_t>(p * p));
  auto coords = [&](std::int64_t t) { return Grid3{t / (w[1] * w[2]), (t / w[2]) % w[1], t % w[2]}; };
  for (std::int64_t i = 0; i < p; ++i) {
    const Grid3 ci = coords(i);
    for (std::int64_t j = 0; j < p; ++j) {
      const Grid3 cj = coords(j);
      std::int64_t e = 0;
      for (int a = 0; a < 3; ++a) e = e * (2 * w[a] - 1) + (cj[a] - ci[a] + w[a] - 1);
      idx.index[static_cast<std::size_t>(i * p + j)] = e;
    }
  }
  return idx;
}

template <typename T>
Var<T> gather_bias(const Var<T>& table, const RelPosIndex& idx) {
  if (table.value().rank() != 2 || table.dim(1) != idx.table_size) {
    throw InternalError("gather_bias: table " + shape_str(table.shape()) + " does not hold " +
                        std::to_string(idx.table_size) + " entries per head");
  }
  const std::int64_t heads = table.dim(0);
  const std::int64_t pp = idx.tokens * idx.tokens;
  std::vector<std::int64_t> rows(static_cast<std::size_t>(heads * pp));
  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t e = 0; e < pp; ++e) {
      const std::int64_t v = idx.index[static_cast<std::size_t>(e)];
      if (v < 0 || v >= idx.table_size) throw InternalError("gather_bias: index " + std::to_string(v) + " out of range");
      rows[static_cast<std::size_t>(h * pp + e)] = h * idx.table_size + v;
    }
  }
  return gather_rows(table, 1, std::make_shared<const std::vector<std::int64_t>>(std::move(rows)),
                     Shape{heads, idx.tokens, idx.tokens});
}

template <typename T>
Var<T> to_windows(const Var<T>& tokens, const WindowPlan& plan) {
  const Grid3 g = grid_of(tokens.shape());
  if (g != plan.grid) throw DimensionError("to_windows: grid " + grid_str(g) + " does not match plan " + grid_str(plan.grid));
  const std::int64_t c = tokens.dim(3);
  return gather_rows(tokens, c, plan.gather, Shape{plan.num_windows, plan.tokens, c});
}

template <typename T>
Var<T> from_windows(const Var<T>& windows, const WindowPlan& plan) {
  const std::int64_t c = windows.dim(-1);
  return gather_rows(windows, c, plan.scatter, Shape{plan.grid[0], plan.grid[1], plan.grid[2], c});
}

#define IBV_INSTANTIATE_WINDOWING(T)                                                        \
  template Tensor<T> partition_windows(const Tensor<T>&, const WindowConfig&);              \
  template Tensor<T> merge_windows(const Tensor<T>&, const Grid3&, const WindowConfig&);    \
  template Tensor<T> cyclic_shift(const Tensor<T>&, const Grid3&);                          \
  template Tensor<T> build_shift_mask(const Grid3&, const WindowConfig&, bool);             \
  template Tensor<T> WindowPlan::mask_tensor() const;                                       \
  template Var<T> gather_bias(const Var<T>&, const RelPosIndex&);                           \
  template Var<T> to_windows(const Var<T>&, const WindowPlan&);                             \
  template Var<T> from_windows(const Var<T>&, const WindowPlan&);

IBV_INSTANTIATE_WINDOWING(float)
IBV_INSTANTIATE_WINDOWING(double)

}  // namespace ibv
