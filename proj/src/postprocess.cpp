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

#include "ibimhav/postprocess.hpp"

#include <algorithm>

#include "ibimhav/errors.hpp"

namespace ibv {

ComponentLabeling connected_components(const Volume& mask, int connectivity) {
  if (connectivity != 6 && connectivity != 26) {
    throw ConfigError("connectivity must be 6 or 26, got " + std::to_string(connectivity));
  }
  ComponentLabeling out;
  out.extents = mask.extents();
  out.spacing = mask.spacing;
  const Grid3 e = out.extents;
  out.labels.assign(static_cast<std::size_t>(mask.voxels()), 0);
  std::vector<std::array<int, 3>> offsets;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        const int n = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (n == 0 || (connectivity == 6 && n != 1)) continue;
        offsets.push_back({dx, dy, dz});
      }
  std::vector<std::int64_t> stack;
  for (std::int64_t start = 0; start < mask.voxels(); ++start) {
    if (mask.data[start] == 0.0f || out.labels[start] != 0) continue;
    const auto label = static_cast<std::int32_t>(out.sizes.size() + 1);
    std::int64_t size = 0;
    out.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::int64_t v = stack.back();
      stack.pop_back();
      ++size;
      const std::int64_t x = v / (e[1] * e[2]), y = (v / e[2]) % e[1], z = v % e[2];
      for (const auto& o : offsets) {
        const std::int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
        if (nx < 0 || ny < 0 || nz < 0 || nx >= e[0] || ny >= e[1] || nz >= e[2]) continue;
        const std::int64_t u = (nx * e[1] + ny) * e[2] + nz;
        if (mask.data[u] != 0.0f && out.labels[u] == 0) {
          out.labels[u] = label;
          stack.push_back(u);
        }
      }
    }
    out.sizes.push_back(size);
  }
  return out;
}

Volume filter_small(const ComponentLabeling& labeling, double min_volume_mm3) {
  Volume out(labeling.extents, labeling.spacing, VolumeKind::kMask);
  const double voxel = labeling.spacing[0] * labeling.spacing[1] * labeling.spacing[2];
  std::vector<char> keep(labeling.sizes.size());
  for (std::size_t k = 0; k < keep.size(); ++k) keep[k] = static_cast<double>(labeling.sizes[k]) * voxel >= min_volume_mm3;
  for (std::size_t i = 0; i < labeling.labels.size(); ++i) {
    const auto l = labeling.labels[i];
    if (l > 0 && keep[static_cast<std::size_t>(l - 1)]) out.data[i] = 1.0f;
  }
  return out;
}

namespace {

// Separable cube max (dilate) or min (erode) along one axis; out-of-bounds
// neighbours are skipped.
Volume sweep(const Volume& in, int axis, int r, bool dilate) {
  const Grid3 e = in.extents();
  Volume out = in;
  const std::int64_t stride = axis == 0 ? e[1] * e[2] : (axis == 1 ? e[2] : 1);
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t z = 0; z < e[2]; ++z) {
        const std::int64_t p[3] = {x, y, z};
        const std::int64_t i = in.index(x, y, z);
        float v = in.data[i];
        for (int d = -r; d <= r; ++d) {
          const std::int64_t q = p[axis] + d;
          if (q < 0 || q >= e[axis]) continue;
          const float u = in.data[i + d * stride];
          v = dilate ? std::max(v, u) : std::min(v, u);
        }
        out.data[i] = v;
      }
  return out;
}

}  // namespace

Volume morph_close(const Volume& mask, int radius) {
  if (radius < 0) throw ConfigError("closing radius must be non-negative");
  Volume v = mask;
  for (int a = 0; a < 3; ++a) v = sweep(v, a, radius, true);
  for (int a = 0; a < 3; ++a) v = sweep(v, a, radius, false);
  v.kind = VolumeKind::kMask;
  return v;
}

Volume remove_small_components(const Volume& mask, double min_volume_mm3, int connectivity) {
  return filter_small(connected_components(mask, connectivity), min_volume_mm3);
}

}  // namespace ibv
