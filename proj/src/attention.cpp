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

#include "ibimhav/attention.hpp"

namespace ibv {

std::string to_string(PositionMode m) {
  switch (m) {
    case PositionMode::kAbsoluteOnly:
      return "absolute_only";
    case PositionMode::kRelativeOnly:
      return "relative_only";
    case PositionMode::kInductiveBiased:
      return "inductive_biased";
  }
  return "?";
}

PositionMode position_mode_from_string(const std::string& s) {
  if (s == "absolute_only") return PositionMode::kAbsoluteOnly;
  if (s == "relative_only") return PositionMode::kRelativeOnly;
  if (s == "inductive_biased") return PositionMode::kInductiveBiased;
  throw ConfigError("unknown position mode '" + s + "' (expected absolute_only, relative_only, inductive_biased)");
}

void AttentionConfig::validate() const {
  window.validate();
  if (heads < 1 || dim < 1 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (mlp_ratio < 1) throw ConfigError("mlp ratio must be >= 1");
}

template <typename T>
AttentionParams<T> AttentionParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                              const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::int64_t c = cfg.dim;
  AttentionParams p;
  p.qkv_w = store.create(prefix + ".qkv.weight", {c, 3 * c}, Init::kTruncNormal, rng);
  p.qkv_b = store.create(prefix + ".qkv.bias", {3 * c}, Init::kZeros, rng);
  p.proj_w = store.create(prefix + ".proj.weight", {c, c}, Init::kTruncNormal, rng);
  p.proj_b = store.create(prefix + ".proj.bias", {c}, Init::kZeros, rng);
  if (uses_relative(cfg.mode)) {
    const RelPosIndex idx = build_rel_pos_index(cfg.window);
    p.rel_table = store.create(prefix + ".rel_bias", {cfg.heads, idx.table_size}, Init::kTruncNormal, rng);
    store.params().back().decay = false;
  }
  if (cfg.has_absolute_table()) {
    auto& v = store.create(prefix + ".abs_embed", {cfg.window.tokens(), c}, Init::kTruncNormal, rng);
    store.params().back().decay = false;
    p.abs_embed = v;
  }
  return p;
}

template <typename T>
MlpParams<T> MlpParams<T>::create(ParamStore<T>& store, const std::string& prefix, std::int64_t dim, int ratio,
                                  Rng& rng) {
  MlpParams p;
  p.fc1_w = store.create(prefix + ".fc1.weight", {dim, ratio * dim}, Init::kTruncNormal, rng);
  p.fc1_b = store.create(prefix + ".fc1.bias", {ratio * dim}, Init::kZeros, rng);
  p.fc2_w = store.create(prefix + ".fc2.weight", {ratio * dim, dim}, Init::kTruncNormal, rng);
  p.fc2_b = store.create(prefix + ".fc2.bias", {dim}, Init::kZeros, rng);
  return p;
}

template <typename T>
BlockParams<T> BlockParams<T>::create(ParamStore<T>& store, const std::string& prefix, const AttentionConfig& cfg,
                                      Rng& rng) {
  BlockParams p;
  p.norm1_g = store.create(prefix + ".norm1.weight", {cfg.dim}, Init::kOnes, rng);
  p.norm1_b = store.create(prefix + ".norm1.bias", {cfg.dim}, Init::kZeros, rng);
  p.attn = AttentionParams<T>::create(store, prefix + ".attn", cfg, rng);
  p.norm2_g = store.create(prefix + ".norm2.weight", {cfg.dim}, Init::kOnes, rng);
  p.norm2_b = store.create(prefix + ".norm2.bias", {cfg.dim}, Init::kZeros, rng);
  p.mlp = MlpParams<T>::create(store, prefix + ".mlp", cfg.dim, cfg.mlp_ratio, rng);
  return p;
}

template <typename T>
PairParams<T> PairParams<T>::create(ParamStore<T>& store, const std::string& prefix, const AttentionConfig& first,
                                    const AttentionConfig& second, Rng& rng) {
  PairParams p;
  p.regular = BlockParams<T>::create(store, prefix + ".0", first, rng);
  p.shifted = BlockParams<T>::create(store, prefix + ".1", second, rng);
  return p;
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias, const Tensor<T>& mask,
                 Tensor<T>* weights_out) {
  if (q.value().rank() != 2) throw DimensionError("attention: q must be [P, d], got " + shape_str(q.shape()));
  const std::int64_t p = q.dim(0);
  Var<T> b3 = bias.defined() ? reshape(bias, {1, p, p}) : Var<T>();
  Tensor<T> m3 = mask.empty() ? Tensor<T>() : mask.reshaped({1, p, p});
  return multi_head_attention(q, k, v, b3, m3, 1, weights_out);
}

namespace {

template <typename T>
void check_mode(const AttentionParams<T>& params, const AttentionConfig& cfg) {
  if (uses_relative(cfg.mode) != params.rel_table.defined()) {
    throw ConfigError("position mode " + to_string(cfg.mode) + " does not match the presence of a relative bias table");
  }
  if (cfg.has_absolute_table() != params.abs_embed.defined()) {
    throw ConfigError("position mode " + to_string(cfg.mode) +
                      " does not match the presence of an absolute embedding table");
  }
}

}  // namespace

template <typename T>
Var<T> ib_msa_windows(const Var<T>& windows, const AttentionParams<T>& params, const AttentionConfig& cfg,
                      const Tensor<T>& mask, Tensor<T>* weights_out) {
  cfg.validate();
  check_mode(params, cfg);
  if (windows.value().rank() != 3 || windows.dim(1) != cfg.window.tokens() || windows.dim(2) != cfg.dim) {
    throw DimensionError("ib_msa: window batch " + shape_str(windows.shape()) + " expected [N," +
                         std::to_string(cfg.window.tokens()) + "," + std::to_string(cfg.dim) + "]");
  }
  const std::int64_t c = cfg.dim;
  Var<T> x = params.abs_embed.defined() ? add_broadcast(windows, params.abs_embed) : windows;
  Var<T> qkv = linear(x, params.qkv_w, params.qkv_b);
  Var<T> q = slice_lastdim(qkv, 0, c);
  Var<T> k = slice_lastdim(qkv, c, 2 * c);
  Var<T> v = slice_lastdim(qkv, 2 * c, 3 * c);
  Var<T> bias;
  if (params.rel_table.defined()) bias = gather_bias(params.rel_table, build_rel_pos_index(cfg.window));
  Var<T> o = multi_head_attention(q, k, v, bias, mask, cfg.heads, weights_out);
  return linear(o, params.proj_w, params.proj_b);
}

template <typename T>
Var<T> ib_msa(const Var<T>& tokens, const AttentionParams<T>& params, const AttentionConfig& cfg,
              const WindowPlan& plan, Tensor<T>* weights_out) {
  Var<T> w = to_windows(tokens, plan);
  Var<T> o = ib_msa_windows(w, params, cfg, plan.mask_tensor<T>(), weights_out);
  return from_windows(o, plan);
}

template <typename T>
Var<T> mlp(const Var<T>& x, const MlpParams<T>& params) {
  return linear(gelu(linear(x, params.fc1_w, params.fc1_b)), params.fc2_w, params.fc2_b);
}

template <typename T>
Var<T> transformer_block(const Var<T>& tokens, const BlockParams<T>& params, const AttentionConfig& cfg,
                         const WindowPlan& plan) {
  Var<T> h = add(tokens, ib_msa(layer_norm(tokens, params.norm1_g, params.norm1_b), params.attn, cfg, plan));
  return add(h, mlp(layer_norm(h, params.norm2_g, params.norm2_b), params.mlp));
}

template <typename T>
Var<T> transformer_block_pair(const Var<T>& tokens, const PairParams<T>& params, const AttentionConfig& first,
                              const AttentionConfig& second, const WindowPlan& regular, const WindowPlan& shifted) {
  Var<T> h = transformer_block(tokens, params.regular, first, regular);
  return transformer_block(h, params.shifted, second, shifted);
}

template <typename T>
Var<T> transformer_block_pair(const Var<T>& tokens, const PairParams<T>& params, const AttentionConfig& cfg) {
  if (tokens.value().rank() != 4) throw DimensionError("transformer block expects [h,w,d,C], got " + shape_str(tokens.shape()));
  const Grid3 g{tokens.dim(0), tokens.dim(1), tokens.dim(2)};
  return transformer_block_pair(tokens, params, cfg, cfg, make_window_plan(g, cfg.window, false),
                                make_window_plan(g, cfg.window, true));
}

#define IBV_INSTANTIATE_ATTENTION(T)                                                                               \
  template struct AttentionParams<T>;                                                                              \
  template struct MlpParams<T>;                                                                                    \
  template struct BlockParams<T>;                                                                                  \
  template struct PairParams<T>;                                                                                   \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Tensor<T>&,          \
                            Tensor<T>*);                                                                           \
  template Var<T> ib_msa_windows(const Var<T>&, const AttentionParams<T>&, const AttentionConfig&,                 \
                                 const Tensor<T>&, Tensor<T>*);                                                    \
  template Var<T> ib_msa(const Var<T>&, const AttentionParams<T>&, const AttentionConfig&, const WindowPlan&,      \
                         Tensor<T>*);                                                                              \
  template Var<T> mlp(const Var<T>&, const MlpParams<T>&);                                                         \
  template Var<T> transformer_block(const Var<T>&, const BlockParams<T>&, const AttentionConfig&,                  \
                                    const WindowPlan&);                                                            \
  template Var<T> transformer_block_pair(const Var<T>&, const PairParams<T>&, const AttentionConfig&,              \
                                         const AttentionConfig&, const WindowPlan&, const WindowPlan&);            \
  template Var<T> transformer_block_pair(const Var<T>&, const PairParams<T>&, const AttentionConfig&);

IBV_INSTANTIATE_ATTENTION(float)
IBV_INSTANTIATE_ATTENTION(double)

}  // namespace ibv
