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
#include <vector>

#include "ibimhav/volume.hpp"

namespace ibv {

struct ComponentLabeling {
  Grid3 extents{};
  Spacing spacing{1, 1, 1};
  std::vector<std::int32_t> labels;  // same layout as Volume::data, 0 = background
  std::vector<std::int64_t> sizes;   // sizes[k − 1] is the voxel count of label k

  std::int64_t count() const { return static_cast<std::int64_t>(sizes.size()); }
};

// Flood labeling with 6- or 26-connectivity. Labels follow the raster order
// of each component's first voxel.
ComponentLabeling connected_components(const Volume& mask, int connectivity = 26);

// Keeps a component iff size · sx·sy·sz ≥ min_volume_mm3.
Volume filter_small(const ComponentLabeling& labeling, double min_volume_mm3 = 180.0);

// Dilation then erosion with a (2r+1)³ cube. Out-of-bounds voxels are ignored
// by both passes.
Volume morph_close(const Volume& mask, int radius = 1);

Volume remove_small_components(const Volume& mask, double min_volume_mm3 = 180.0, int connectivity = 26);

}  // namespace ibv
