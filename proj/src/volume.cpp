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

#include "ibimhav/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ibimhav/errors.hpp"

namespace ibv {

Volume::Volume(const Grid3& extents, Spacing sp, VolumeKind k, float fill)
    : data(Shape{extents[0], extents[1], extents[2]}, fill), spacing(sp), kind(k) {
  validate();
}

void Volume::validate() const {
  if (data.rank() != 3) throw DimensionError("volume data must be rank 3, got " + shape_str(data.shape()));
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw FormatError("volume spacing must be positive and finite");
  }
  if (kind == VolumeKind::kMask) {
    for (float v : data.data()) {
      if (v != 0.0f && v != 1.0f) throw FormatError("mask volume holds non-binary value " + std::to_string(v));
    }
  }
}

namespace {

void require_same_grid(const Volume& a, const Volume& b, const char* what) {
  if (a.extents() != b.extents()) {
    throw DimensionError(std::string(what) + ": extents " + grid_str(a.extents()) + " vs " + grid_str(b.extents()));
  }
}

}  // namespace

void CaseRecord::validate() const {
  image.validate();
  liver.validate();
  vessel.validate();
  require_same_grid(image, liver, "case liver mask");
  require_same_grid(image, vessel, "case vessel mask");
  if (image.spacing != liver.spacing || image.spacing != vessel.spacing) {
    throw FormatError("case " + case_id + ": volumes do not share spacing");
  }
}

Volume load_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open volume '" + path + "'");
  std::string header;
  if (!std::getline(in, header)) throw FormatError(path + ": missing header at byte 0");
  const auto payload_at = static_cast<std::int64_t>(header.size()) + 1;
  std::istringstream hs(header);
  std::string magic, dtype;
  Grid3 ext{};
  Spacing sp{};
  hs >> magic >> ext[0] >> ext[1] >> ext[2] >> sp[0] >> sp[1] >> sp[2] >> dtype;
  if (magic != "RVOL1") throw FormatError(path + ": bad magic at byte 0 (expected RVOL1)");
  if (hs.fail()) throw FormatError(path + ": malformed header at byte " + std::to_string(std::max<std::streamoff>(0, hs.tellg())));
  std::string extra;
  if (hs >> extra) throw FormatError(path + ": trailing header token '" + extra + "'");
  for (auto e : ext) {
    if (e < 1) throw FormatError(path + ": non-positive extent in header");
  }
  if (dtype != "f32" && dtype != "u8") throw FormatError(path + ": unsupported dtype '" + dtype + "' in header");
  const std::int64_t n = volume_of(ext);
  const std::int64_t width = dtype == "f32" ? 4 : 1;
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::int64_t have = static_cast<std::int64_t>(raw.size());
  if (have != n * width) {
    throw FormatError(path + ": payload size mismatch at byte " + std::to_string(payload_at + std::min(have, n * width)) +
                      ": header declares " + std::to_string(n) + " scalars (" + std::to_string(n * width) +
                      " bytes), found " + std::to_string(have) + " bytes");
  }
  Volume v;
  v.data = Tensor<float>(Shape{ext[0], ext[1], ext[2]});
  v.spacing = sp;
  v.kind = dtype == "u8" ? VolumeKind::kMask : VolumeKind::kScalar;
  std::int64_t i = 0;
  for (std::int64_t z = 0; z < ext[2]; ++z)
    for (std::int64_t y = 0; y < ext[1]; ++y)
      for (std::int64_t x = 0; x < ext[0]; ++x, ++i) {
        float val;
        if (width == 4) {
          std::uint32_t bits = 0;
          for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
          std::memcpy(&val, &bits, 4);
        } else {
          if (raw[i] > 1) {
            throw FormatError(path + ": mask value " + std::to_string(raw[i]) + " at byte " +
                              std::to_string(payload_at + i));
          }
          val = raw[i];
        }
        v.at(x, y, z) = val;
      }
  v.validate();
  return v;
}

void save_volume(const Volume& v, const std::string& path) {
  v.validate();
  const Grid3 e = v.extents();
  const bool u8 = v.kind == VolumeKind::kMask;
  char header[256];
  std::snprintf(header, sizeof header, "RVOL1 %lld %lld %lld %.17g %.17g %.17g %s\n", static_cast<long long>(e[0]),
                static_cast<long long>(e[1]), static_cast<long long>(e[2]), v.spacing[0], v.spacing[1], v.spacing[2],
                u8 ? "u8" : "f32");
  std::vector<unsigned char> out;
  out.reserve(static_cast<std::size_t>(v.voxels() * (u8 ? 1 : 4)));
  for (std::int64_t z = 0; z < e[2]; ++z)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t x = 0; x < e[0]; ++x) {
        const float val = v.at(x, y, z);
        if (u8) {
          out.push_back(static_cast<unsigned char>(val));
        } else {
          std::uint32_t bits;
          std::memcpy(&bits, &val, 4);
          for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
        }
      }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write volume '" + path + "'");
  f.write(header, static_cast<std::streamsize>(std::strlen(header)));
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("short write to '" + path + "'");
}

Volume clamp_hu(const Volume& v, float lo, float hi) {
  if (!(lo < hi)) throw ConfigError("clamp_hu needs lo < hi");
  Volume out = v;
  for (auto& x : out.data.data()) x = std::clamp(x, lo, hi);
  return out;
}

Box mask_bbox(const Volume& mask) {
  const Grid3 e = mask.extents();
  Box b{{e[0], e[1], e[2]}, {-1, -1, -1}};
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t z = 0; z < e[2]; ++z)
        if (mask.at(x, y, z) != 0.0f) {
          const Grid3 p{x, y, z};
          for (int a = 0; a < 3; ++a) {
            b.lo[a] = std::min(b.lo[a], p[a]);
            b.hi[a] = std::max(b.hi[a], p[a]);
          }
        }
  if (b.hi[0] < 0) throw DegenerateError("liver mask is empty; no region of interest to crop");
  return b;
}

Volume crop(const Volume& v, const Box& box) {
  const Grid3 e = v.extents(), n = box.extents();
  for (int a = 0; a < 3; ++a) {
    if (box.lo[a] < 0 || box.hi[a] >= e[a] || n[a] < 1) throw DimensionError("crop box outside " + grid_str(e));
  }
  Volume out(n, v.spacing, v.kind);
  for (std::int64_t x = 0; x < n[0]; ++x)
    for (std::int64_t y = 0; y < n[1]; ++y)
      for (std::int64_t z = 0; z < n[2]; ++z) out.at(x, y, z) = v.at(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
  return out;
}

namespace {

double source_coord(std::int64_t o, std::int64_t in, std::int64_t out) {
  if (out == 1 || in == 1) return 0.0;
  return static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

Volume resized_shell(const Volume& v, const Grid3& target, VolumeKind kind) {
  for (auto t : target) {
    if (t < 1) throw DimensionError("resize target " + grid_str(target) + " must be positive");
  }
  const Grid3 e = v.extents();
  Spacing sp;
  for (int a = 0; a < 3; ++a) sp[a] = v.spacing[a] * static_cast<double>(e[a]) / static_cast<double>(target[a]);
  return Volume(target, sp, kind);
}

// Trilinear sample at fractional coordinates; coordinates are inside the grid.
float sample_linear(const Volume& v, double fx, double fy, double fz) {
  const Grid3 e = v.extents();
  const double f[3] = {fx, fy, fz};
  std::int64_t i0[3], i1[3];
  double w[3];
  for (int a = 0; a < 3; ++a) {
    const double c = std::clamp(f[a], 0.0, static_cast<double>(e[a] - 1));
    i0[a] = static_cast<std::int64_t>(std::floor(c));
    i1[a] = std::min(i0[a] + 1, e[a] - 1);
    w[a] = c - static_cast<double>(i0[a]);
  }
  double acc = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double wt = 1.0;
    std::int64_t p[3];
    for (int a = 0; a < 3; ++a) {
      const bool hi = corner >> (2 - a) & 1;
      p[a] = hi ? i1[a] : i0[a];
      wt *= hi ? w[a] : 1.0 - w[a];
    }
    if (wt != 0.0) acc += wt * v.at(p[0], p[1], p[2]);
  }
  return static_cast<float>(acc);
}

}  // namespace

Volume resize_trilinear(const Volume& v, const Grid3& target) {
  const Grid3 e = v.extents();
  Volume out = resized_shell(v, target, VolumeKind::kScalar);
  for (std::int64_t x = 0; x < target[0]; ++x)
    for (std::int64_t y = 0; y < target[1]; ++y)
      for (std::int64_t z = 0; z < target[2]; ++z)
        out.at(x, y, z) = sample_linear(v, source_coord(x, e[0], target[0]), source_coord(y, e[1], target[1]),
                                        source_coord(z, e[2], target[2]));
  return out;
}

Volume resize_nearest(const Volume& v, const Grid3& target) {
  const Grid3 e = v.extents();
  Volume out = resized_shell(v, target, v.kind);
  std::vector<std::int64_t> map[3];
  for (int a = 0; a < 3; ++a)
    for (std::int64_t o = 0; o < target[a]; ++o)
      map[a].push_back(std::min<std::int64_t>(std::llround(source_coord(o, e[a], target[a])), e[a] - 1));
  for (std::int64_t x = 0; x < target[0]; ++x)
    for (std::int64_t y = 0; y < target[1]; ++y)
      for (std::int64_t z = 0; z < target[2]; ++z) out.at(x, y, z) = v.at(map[0][x], map[1][y], map[2][z]);
  return out;
}

CaseRecord crop_resize_roi(const CaseRecord& c, const Grid3& target) {
  c.validate();
  const Box box = mask_bbox(c.liver);
  CaseRecord out;
  out.case_id = c.case_id;
  out.image = resize_trilinear(crop(c.image, box), target);
  out.liver = resize_nearest(crop(c.liver, box), target);
  out.vessel = resize_nearest(crop(c.vessel, box), target);
  return out;
}

Volume supplement_vessel_mask(const Volume& vessel, const Volume& liver) {
  require_same_grid(vessel, liver, "supplement_vessel_mask");
  Volume out = vessel;
  out.kind = VolumeKind::kMask;
  return out;
}

Volume restrict_to_liver(const Volume& vessel, const Volume& liver) {
  require_same_grid(vessel, liver, "restrict_to_liver");
  Volume out = vessel;
  out.kind = VolumeKind::kMask;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (vessel.data[i] != 0 && liver.data[i] != 0) ? 1.0f : 0.0f;
  return out;
}

Volume normalize_zscore(const Volume& v) {
  const double n = static_cast<double>(v.voxels());
  double mean = 0.0;
  for (float x : v.data.data()) mean += x;
  mean /= n;
  double var = 0.0;
  for (float x : v.data.data()) var += (x - mean) * (x - mean);
  var /= n;
  if (!(var > 0.0)) throw DegenerateError("cannot normalize a constant volume (variance 0)");
  const double inv = 1.0 / std::sqrt(var);
  Volume out = v;
  out.kind = VolumeKind::kScalar;
  for (auto& x : out.data.data()) x = static_cast<float>((x - mean) * inv);
  return out;
}

PreparedCase preprocess_case(const CaseRecord& c, const PreprocessConfig& cfg) {
  CaseRecord roi = crop_resize_roi(c, cfg.target);
  PreparedCase out;
  out.case_id = c.case_id;
  const Volume clamped = clamp_hu(roi.image, cfg.hu_lo, cfg.hu_hi);
  out.label = supplement_vessel_mask(roi.vessel, roi.liver);
  out.truth = restrict_to_liver(roi.vessel, roi.liver);
  out.image = normalize_zscore(clamped);
  out.liver = roi.liver;
  return out;
}

CaseRecord load_case(const std::filesystem::path& dir) {
  CaseRecord c;
  c.case_id = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  c.image = load_volume((dir / "image.rvol").string());
  c.liver = load_volume((dir / "liver.rvol").string());
  c.vessel = load_volume((dir / "vessel.rvol").string());
  c.liver.kind = c.vessel.kind = VolumeKind::kMask;
  c.validate();
  return c;
}

void save_case(const CaseRecord& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_volume(c.image, (dir / "image.rvol").string());
  save_volume(c.liver, (dir / "liver.rvol").string());
  save_volume(c.vessel, (dir / "vessel.rvol").string());
}

PreparedCase load_prepared_case(const std::filesystem::path& dir) {
  PreparedCase c;
  c.case_id = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  c.image = load_volume((dir / "image.rvol").string());
  c.label = load_volume((dir / "label.rvol").string());
  c.truth = load_volume((dir / "truth.rvol").string());
  c.liver = load_volume((dir / "liver.rvol").string());
  for (const Volume* v : {&c.label, &c.truth, &c.liver}) {
    if (v->extents() != c.image.extents()) {
      throw DimensionError("prepared case " + dir.string() + ": mask extents " + grid_str(v->extents()) +
                           " differ from image extents " + grid_str(c.image.extents()));
    }
  }
  return c;
}

void save_prepared_case(const PreparedCase& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_volume(c.image, (dir / "image.rvol").string());
  save_volume(c.label, (dir / "label.rvol").string());
  save_volume(c.truth, (dir / "truth.rvol").string());
  save_volume(c.liver, (dir / "liver.rvol").string());
}

std::string to_string(Rotation r) {
  switch (r) {
    case Rotation::kNone:
      return "none";
    case Rotation::kRot60:
      return "rot60";
    case Rotation::kRot270:
      return "rot270";
  }
  return "?";
}

Rotation rotation_from_string(const std::string& s) {
  if (s == "none") return Rotation::kNone;
  if (s == "rot60") return Rotation::kRot60;
  if (s == "rot270") return Rotation::kRot270;
  throw ConfigError("unknown rotation '" + s + "' (expected none, rot60, rot270)");
}

double AugmentSpec::degrees() const {
  if (angle_deg != 0.0) return angle_deg;
  switch (rotation) {
    case Rotation::kRot60:
      return 60.0;
    case Rotation::kRot270:
      return 270.0;
    case Rotation::kNone:
      break;
  }
  return 0.0;
}

Volume augment_volume(const Volume& v, const AugmentSpec& spec) {
  if (std::abs(spec.tx) > 25 || std::abs(spec.ty) > 25) {
    throw ConfigError("translation must lie within ±25 voxels");
  }
  const Grid3 e = v.extents();
  const bool mask = v.kind == VolumeKind::kMask;
  float fill = 0.0f;
  if (!mask) fill = *std::min_element(v.data.data().begin(), v.data.data().end());
  const double rad = spec.degrees() * M_PI / 180.0;
  auto snap = [](double s) { return std::abs(s) < 1e-12 ? 0.0 : s; };
  const double c = snap(std::cos(rad)), s = snap(std::sin(rad));
  const double cx = 0.5 * static_cast<double>(e[0] - 1), cy = 0.5 * static_cast<double>(e[1] - 1);
  Volume out(e, v.spacing, v.kind);
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y) {
      // Undo the translation, then the rotation.
      const double px = static_cast<double>(x - spec.tx) - cx, py = static_cast<double>(y - spec.ty) - cy;
      const double sx = c * px + s * py + cx, sy = -s * px + c * py + cy;
      const double tol = 1e-9;
      const bool inside = sx >= -tol && sy >= -tol && sx <= static_cast<double>(e[0] - 1) + tol &&
                          sy <= static_cast<double>(e[1] - 1) + tol;
      for (std::int64_t z = 0; z < e[2]; ++z) {
        float val = fill;
        if (inside) {
          if (mask) {
            val = v.at(std::clamp<std::int64_t>(std::llround(sx), 0, e[0] - 1),
                       std::clamp<std::int64_t>(std::llround(sy), 0, e[1] - 1), z);
          } else {
            val = sample_linear(v, sx, sy, static_cast<double>(z));
          }
        }
        out.at(x, y, z) = val;
      }
    }
  return out;
}

CaseRecord augment_case(const CaseRecord& c, const AugmentSpec& spec) {
  CaseRecord out;
  out.case_id = c.case_id;
  out.image = augment_volume(c.image, spec);
  out.liver = augment_volume(c.liver, spec);
  out.vessel = augment_volume(c.vessel, spec);
  return out;
}

AugmentSpec random_augment(Rng& rng, std::int64_t max_shift) {
  AugmentSpec a;
  a.rotation = static_cast<Rotation>(rng.uniform_int(0, 2));
  a.tx = rng.uniform_int(-max_shift, max_shift);
  a.ty = rng.uniform_int(-max_shift, max_shift);
  return a;
}

std::vector<std::int64_t> axis_origins(std::int64_t extent, std::int64_t patch, std::int64_t stride) {
  if (patch < 1 || stride < 1) throw ConfigError("patch and stride must be positive");
  if (patch > extent) {
    throw DimensionError("patch " + std::to_string(patch) + " exceeds volume extent " + std::to_string(extent));
  }
  if (stride > patch) throw ConfigError("stride larger than patch would leave gaps");
  std::vector<std::int64_t> o;
  for (std::int64_t p = 0; p + patch <= extent; p += stride) o.push_back(p);
  if (o.back() + patch < extent) {
    const std::int64_t last = extent - patch;
    const bool gap = o.size() > 1 && o[o.size() - 2] + patch < last;
    if (o.size() > 1 && !gap) {
      o.back() = last;
    } else {
      o.push_back(last);
    }
  }
  return o;
}

std::vector<Grid3> sliding_window_grid(const Grid3& extents, const Grid3& patch, std::int64_t stride) {
  const auto ox = axis_origins(extents[0], patch[0], stride);
  const auto oy = axis_origins(extents[1], patch[1], stride);
  const auto oz = axis_origins(extents[2], patch[2], stride);
  std::vector<Grid3> out;
  out.reserve(ox.size() * oy.size() * oz.size());
  for (auto x : ox)
    for (auto y : oy)
      for (auto z : oz) out.push_back({x, y, z});
  return out;
}

}  // namespace ibv
