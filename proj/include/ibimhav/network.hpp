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
#include <vector>

#include "ibimhav/attention.hpp"

namespace ibv {

enum class DownsampleMode { kConvStride2, kPatchMerge3d };
enum class UpsampleMode { kTransposedConv, kTrilinear, kPatchExpand };

std::string to_string(DownsampleMode m);
std::string to_string(UpsampleMode m);
DownsampleMode downsample_mode_from_string(const std::string& s);
UpsampleMode upsample_mode_from_string(const std::string& s);

struct ModelConfig {
  Grid3 patch{128, 128, 96};
  std::int64_t embed_dim = 128;
  // Heads per resolution level, finest first; the last entry is the bottleneck.
  std::vector<int> heads{4, 8, 16, 32};
  int blocks = 10;
  // Number of downsampling steps between the embedded grid and the bottleneck.
  int levels = 3;
  WindowConfig window;
  DownsampleMode downsample = DownsampleMode::kConvStride2;
  UpsampleMode upsample = UpsampleMode::kTransposedConv;
  PositionMode position = PositionMode::kInductiveBiased;
  bool add_absolute = true;
  bool local_path = true;
  std::int64_t local_channels = 16;
  int local_kernel = 5;
  int embed_kernel = 3;
  int mlp_ratio = 4;
  int num_classes = 2;

  void validate() const;
};

struct LevelPlan {
  Grid3 grid{};
  std::int64_t channels = 0;
  int encoder_pairs = 0;
  int decoder_pairs = 0;
};

// levels[0] is the embedded grid (patch / 4), levels.back() the bottleneck.
// Skip i joins the encoder output at levels[i] to the decoder at levels[i].
struct StagePlan {
  std::vector<LevelPlan> levels;
  int bottleneck_pairs = 1;

  int skip_count() const { return static_cast<int>(levels.size()) - 1; }
  int total_blocks() const;
};

StagePlan make_stage_plan(const ModelConfig& cfg);

template <typename T>
struct EmbedParams {
  Var<T> conv1_w, conv1_b, norm1_g, norm1_b;
  Var<T> conv2_w, conv2_b, norm2_g, norm2_b;
  static EmbedParams create(ParamStore<T>& s, const std::string& prefix, std::int64_t dim, int kernel, Rng& rng);
};

template <typename T>
struct DownParams {
  Var<T> w, b, norm_g, norm_b;  // norm only in conv_stride2 mode
  static DownParams create(ParamStore<T>& s, const std::string& prefix, std::int64_t dim, DownsampleMode mode,
                           Rng& rng);
};

template <typename T>
struct UpParams {
  Var<T> w, b;
  static UpParams create(ParamStore<T>& s, const std::string& prefix, std::int64_t dim, UpsampleMode mode, Rng& rng);
};

template <typename T>
struct LocalParams {
  Var<T> conv1_w, conv1_b, norm1_g, norm1_b;
  Var<T> conv2_w, conv2_b, norm2_g, norm2_b;
  static LocalParams create(ParamStore<T>& s, const std::string& prefix, std::int64_t channels, int kernel, Rng& rng);
};

// x: [1, H, W, D] -> tokens [H/4, W/4, D/4, C].
template <typename T>
Var<T> patch_embed(const Var<T>& x, const EmbedParams<T>& p);

// [h,w,d,C] -> [h/2,w/2,d/2,2C].
template <typename T>
Var<T> downsample(const Var<T>& t, const DownParams<T>& p, DownsampleMode mode);

// [h,w,d,C] -> [2h,2w,2d,C/2].
template <typename T>
Var<T> upsample(const Var<T>& t, const UpParams<T>& p, UpsampleMode mode);

// x: [1, H, W, D] -> channel-last features [H, W, D, channels].
template <typename T>
Var<T> local_feature_path(const Var<T>& x, const LocalParams<T>& p, int kernel);

template <typename T>
class Network {
 public:
  Network(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const StagePlan& plan() const { return plan_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  // Channel-last logits [H, W, D, 2] for a patch [H, W, D].
  Var<T> logits(const Tensor<T>& patch) const;
  // Class probabilities [2, H, W, D]; channel 1 is the vessel class.
  Var<T> forward(const Tensor<T>& patch) const;
  // Vessel probability [H, W, D].
  Var<T> foreground(const Tensor<T>& patch) const;

 private:
  struct Level {
    AttentionConfig attn;
    WindowPlan regular, shifted;
    std::vector<PairParams<T>> enc, dec;
    DownParams<T> down;  // to the next level
    UpParams<T> up;      // from the next level
    Var<T> fuse_w, fuse_b;
  };

  Var<T> run_pairs(Var<T> t, const std::vector<PairParams<T>>& pairs, const AttentionConfig& a, const WindowPlan& r,
                   const WindowPlan& s) const;

  ModelConfig cfg_;
  StagePlan plan_;
  ParamStore<T> store_;
  EmbedParams<T> embed_;
  LocalParams<T> local_;
  std::vector<Level> levels_;
  AttentionConfig bottleneck_attn_;
  WindowPlan bottleneck_regular_, bottleneck_shifted_;
  std::vector<PairParams<T>> bottleneck_;
  UpParams<T> final_up1_, final_up2_;
  Var<T> head_w_, head_b_;
};

}  // namespace ibv
