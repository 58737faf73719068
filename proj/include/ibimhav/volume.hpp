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
#include <filesystem>
#include <string>
#include <vector>

#include "ibimhav/params.hpp"
#include "ibimhav/tensor.hpp"
#include "ibimhav/windowing.hpp"

namespace ibv {

using Spacing = std::array<double, 3>;

enum class VolumeKind { kScalar, kMask };

// Dense scalar grid. Values are held as a row-major [H, W, D] tensor
// (z fastest); the on-disk order is x fastest.
struct Volume {
  Tensor<float> data;
  Spacing spacing{1.0, 1.0, 1.0};
  VolumeKind kind = VolumeKind::kScalar;

  Volume() = default;
  Volume(const Grid3& extents, Spacing spacing, VolumeKind kind = VolumeKind::kScalar, float fill = 0.0f);

  Grid3 extents() const { return {data.dim(0), data.dim(1), data.dim(2)}; }
  std::int64_t voxels() const { return static_cast<std::int64_t>(data.size()); }
  double voxel_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }
  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (x * data.dim(1) + y) * data.dim(2) + z;
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data[static_cast<std::size_t>(index(x, y, z))]; }
  float& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data[static_cast<std::size_t>(index(x, y, z))]; }

  // Throws on non-positive spacing or non-binary mask values.
  void validate() const;
};

struct CaseRecord {
  std::string case_id;
  Volume image;
  Volume liver;
  Volume vessel;

  void validate() const;
};

// RVOL: header `RVOL1 H W D sx sy sz dtype\n`, then little-endian f32 or u8
// scalars in x-fastest order. Masks are written as u8.
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);

Volume clamp_hu(const Volume& v, float lo = -50.0f, float hi = 250.0f);

struct Box {
  Grid3 lo{}, hi{};  // inclusive
  Grid3 extents() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
};

// Tight bounding box of the nonzero voxels; empty masks raise DegenerateError.
Box mask_bbox(const Volume& mask);
Volume crop(const Volume& v, const Box& box);

// Resampling with corner-aligned coordinates: output voxel o maps to input
// o·(n−1)/(m−1). Spacing scales by n/m.
Volume resize_trilinear(const Volume& v, const Grid3& target);
Volume resize_nearest(const Volume& v, const Grid3& target);

// Crops every volume to the liver bounding box and resizes to `target`
// (trilinear for the image, nearest for masks).
CaseRecord crop_resize_roi(const CaseRecord& c, const Grid3& target);

// The training label: the full vessel mask, including extra-hepatic voxels.
Volume supplement_vessel_mask(const Volume& vessel, const Volume& liver);
// Evaluation truth: vessel voxels inside the liver.
Volume restrict_to_liver(const Volume& vessel, const Volume& liver);

// Zero mean, unit (population) variance over all voxels.
Volume normalize_zscore(const Volume& v);

struct PreprocessConfig {
  Grid3 target{256, 256, 192};
  float hu_lo = -50.0f;
  float hu_hi = 250.0f;
};

struct PreparedCase {
  std::string case_id;
  Volume image;  // normalized
  Volume label;  // supplemented vessel mask
  Volume truth;  // vessel ∩ liver
  Volume liver;
};

// crop/resize -> clamp -> supplement -> normalize.
PreparedCase preprocess_case(const CaseRecord& c, const PreprocessConfig& cfg);

// Case directories hold image.rvol, liver.rvol and vessel.rvol; the case id
// is the directory name.
CaseRecord load_case(const std::filesystem::path& dir);
void save_case(const CaseRecord& c, const std::filesystem::path& dir);

// Prepared directories hold image.rvol, label.rvol, truth.rvol and liver.rvol.
PreparedCase load_prepared_case(const std::filesystem::path& dir);
void save_prepared_case(const PreparedCase& c, const std::filesystem::path& dir);

enum class Rotation { kNone, kRot60, kRot270 };

std::string to_string(Rotation r);
Rotation rotation_from_string(const std::string& s);

struct AugmentSpec {
  Rotation rotation = Rotation::kNone;
  double angle_deg = 0.0;  // used instead of `rotation` when nonzero
  std::int64_t tx = 0, ty = 0;

  double degrees() const;
};

// Rotation about the z axis through the volume centre, then an integer
// in-plane translation. Out-of-bounds voxels take the image minimum (0 for
// masks). Masks use nearest-neighbour lookup.
Volume augment_volume(const Volume& v, const AugmentSpec& spec);
CaseRecord augment_case(const CaseRecord& c, const AugmentSpec& spec);

// Draws a rotation from {none, rot60, rot270} and a translation in
// [−max_shift, max_shift]² from `rng`.
AugmentSpec random_augment(Rng& rng, std::int64_t max_shift = 25);

// Patch origins per axis at multiples of `stride`; when the last patch falls
// short of the boundary the last origin is moved to extent − patch (or one
// is appended if moving would leave a gap).
std::vector<std::int64_t> axis_origins(std::int64_t extent, std::int64_t patch, std::int64_t stride);
std::vector<Grid3> sliding_window_grid(const Grid3& extents, const Grid3& patch, std::int64_t stride = 24);

}  // namespace ibv
