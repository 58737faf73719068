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

#include <string>

#include "ibimhav/params.hpp"
#include "ibimhav/windowing.hpp"

namespace ibv {

enum class PositionMode { kAbsoluteOnly, kRelativeOnly, kInductiveBiased };

std::string to_string(PositionMode m);
PositionMode position_mode_from_string(const std::string& s);

inline bool uses_absolute(PositionMode m) { return m != PositionMode::kRelativeOnly; }
inline bool uses_relative(PositionMode m) { return m != PositionMode::kAbsoluteOnly; }

struct AttentionConfig {
  std::int64_t dim = 128;
  int heads = 4;
  PositionMode mode = PositionMode::kInductiveBiased;
  WindowConfig window;
  // Whether this block adds the absolute embedding (for modes that have one).
  bool add_absolute = true;
  int mlp_ratio = 4;

  std::int64_t head_dim() const { return dim / heads; }
  bool has_absolute_table() const { return uses_absolute(mode) && add_absolute; }
  void validate() const;
};

template <typename T>
struct AttentionParams {
  Var<T> qkv_w, qkv_b;    // [C, 3C], [3C]
  Var<T> proj_w, proj_b;  // [C, C], [C]
  Var<T> rel_table;       // [heads, Π(2S−1)], relative modes only
  Var<T> abs_embed;       // [P, C], absolute modes only

  static AttentionParams create(ParamStore<T>& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);
};

template <typename T>
struct MlpParams {
  Var<T> fc1_w, fc1_b, fc2_w, fc2_b;
  static MlpParams create(ParamStore<T>& store, const std::string& prefix, std::int64_t dim, int ratio, Rng& rng);
};

template <typename T>
struct BlockParams {
  Var<T> norm1_g, norm1_b;
  AttentionParams<T> attn;
  Var<T> norm2_g, norm2_b;
  MlpParams<T> mlp;
  static BlockParams create(ParamStore<T>& store, const std::string& prefix, const AttentionConfig& cfg, Rng& rng);
};

// Regular block followed by the shifted block.
template <typename T>
struct PairParams {
  BlockParams<T> regular, shifted;
  static PairParams create(ParamStore<T>& store, const std::string& prefix, const AttentionConfig& first,
                           const AttentionConfig& second, Rng& rng);
};

// Single-head scaled dot-product attention softmax(q·kᵀ/√d + bias + mask)·v
// with q, k, v: [P, d], bias, mask: [P, P] (either may be empty).
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias, const Tensor<T>& mask,
                 Tensor<T>* weights_out = nullptr);

// IB-MSA on a batch of windows [N, P, C] with a prepared additive mask.
template <typename T>
Var<T> ib_msa_windows(const Var<T>& windows, const AttentionParams<T>& params, const AttentionConfig& cfg,
                      const Tensor<T>& mask, Tensor<T>* weights_out = nullptr);

// IB-MSA on a token grid [h, w, d, C]: pads to window multiples, applies the
// cyclic shift when `plan.shifted`, attends per window and restores the grid.
template <typename T>
Var<T> ib_msa(const Var<T>& tokens, const AttentionParams<T>& params, const AttentionConfig& cfg,
              const WindowPlan& plan, Tensor<T>* weights_out = nullptr);

template <typename T>
Var<T> mlp(const Var<T>& x, const MlpParams<T>& params);

// x + IB-MSA(LN(x)), then + MLP(LN(·)).
template <typename T>
Var<T> transformer_block(const Var<T>& tokens, const BlockParams<T>& params, const AttentionConfig& cfg,
                         const WindowPlan& plan);

template <typename T>
Var<T> transformer_block_pair(const Var<T>& tokens, const PairParams<T>& params, const AttentionConfig& first,
                              const AttentionConfig& second, const WindowPlan& regular, const WindowPlan& shifted);

// Convenience overload that builds both window plans for the token grid.
template <typename T>
Var<T> transformer_block_pair(const Var<T>& tokens, const PairParams<T>& params, const AttentionConfig& cfg);

}  // namespace ibv
