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

#include "ibimhav/network.hpp"

#include <memory>

namespace ibv {

std::string to_string(DownsampleMode m) {
  return m == DownsampleMode::kConvStride2 ? "conv_stride2" : "patch_merge_3d";
}

std::string to_string(UpsampleMode m) {
  switch (m) {
    case UpsampleMode::kTransposedConv:
      return "transposed_conv";
    case UpsampleMode::kTrilinear:
      return "trilinear";
    case UpsampleMode::kPatchExpand:
      return "patch_expand";
  }
  return "?";
}

DownsampleMode downsample_mode_from_string(const std::string& s) {
  if (s == "conv_stride2") return DownsampleMode::kConvStride2;
  if (s == "patch_merge_3d") return DownsampleMode::kPatchMerge3d;
  throw ConfigError("unknown downsample mode '" + s + "' (expected conv_stride2, patch_merge_3d)");
}

UpsampleMode upsample_mode_from_string(const std::string& s) {
  if (s == "transposed_conv") return UpsampleMode::kTransposedConv;
  if (s == "trilinear") return UpsampleMode::kTrilinear;
  if (s == "patch_expand") return UpsampleMode::kPatchExpand;
  throw ConfigError("unknown upsample mode '" + s + "' (expected transposed_conv, trilinear, patch_expand)");
}

void ModelConfig::validate() const {
  if (blocks != 6 && blocks != 10 && blocks != 14 && blocks != 18 && blocks != 22) {
    throw ConfigError("blocks must be one of 6, 10, 14, 18, 22; got " + std::to_string(blocks));
  }
  if (levels < 1) throw ConfigError("levels must be >= 1");
  if (static_cast<int>(heads.size()) != levels + 1) {
    throw ConfigError("heads needs " + std::to_string(levels + 1) + " entries (one per level plus bottleneck), got " +
                      std::to_string(heads.size()));
  }
  if (embed_dim < 4 || embed_dim % 4 != 0) throw ConfigError("embed_dim must be a positive multiple of 4");
  for (int l = 0; l <= levels; ++l) {
    const std::int64_t c = embed_dim << l;
    if (heads[l] < 1 || c % heads[l] != 0) {
      throw ConfigError("level " + std::to_string(l) + " width " + std::to_string(c) + " is not divisible by " +
                        std::to_string(heads[l]) + " heads");
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (patch[a] < 4 || patch[a] % 4 != 0) {
      throw DimensionError("patch extents " + grid_str(patch) + " must be multiples of 4");
    }
    if ((patch[a] / 4) % (std::int64_t{1} << levels) != 0) {
      throw DimensionError("token grid " + grid_str({patch[0] / 4, patch[1] / 4, patch[2] / 4}) +
                           " cannot be halved " + std::to_string(levels) + " times");
    }
  }
  if (num_classes != 2) throw ConfigError("num_classes must be 2");
  if (local_channels < 1) throw ConfigError("local_channels must be >= 1");
  if (local_kernel < 1 || local_kernel % 2 == 0) throw ConfigError("local_kernel must be odd");
  if (embed_kernel < 2) throw ConfigError("embed_kernel must be >= 2");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  window.validate();
}

int StagePlan::total_blocks() const {
  int pairs = bottleneck_pairs;
  for (const auto& l : levels) pairs += l.encoder_pairs + l.decoder_pairs;
  return 2 * pairs;
}

StagePlan make_stage_plan(const ModelConfig& cfg) {
  cfg.validate();
  StagePlan plan;
  const int side = (cfg.blocks - 2) / 4;
  Grid3 g{cfg.patch[0] / 4, cfg.patch[1] / 4, cfg.patch[2] / 4};
  for (int l = 0; l <= cfg.levels; ++l) {
    LevelPlan lp;
    lp.grid = g;
    lp.channels = cfg.embed_dim << l;
    if (l < cfg.levels) {
      lp.encoder_pairs = side / cfg.levels + (l < side % cfg.levels ? 1 : 0);
      lp.decoder_pairs = lp.encoder_pairs;
    }
    plan.levels.push_back(lp);
    for (auto& e : g) e /= 2;
  }
  return plan;
}

template <typename T>
EmbedParams<T> EmbedParams<T>::create(ParamStore<T>& s, const std::string& prefix, std::int64_t dim, int kernel,
                                      Rng& rng) {
  const std::int64_t k = kernel, h = dim / 2;
  EmbedParams p;
  p.conv1_w = s.create(prefix + ".conv1.weight", {h, 1, k, k, k}, Init::kTruncNormal, rng, fan_in_std(k * k * k));
  p.conv1_b = s.create(prefix + ".conv1.bias", {h}, Init::kZeros, rng);
  p.norm1_g = s.create(prefix + ".norm1.weight", {h}, Init::kOnes, rng);
  p.norm1_b = s.create(prefix + ".norm1.bias", {h}, Init::kZeros, rng);
  p.conv2_w = s.create(prefix + ".conv2.weight", {dim, h, k, k, k}, Init::kTruncNormal, rng,
                       fan_in_std(h * k * k * k));
  p.conv2_b = s.create(prefix + ".conv2.bias", {dim}, Init::kZeros, rng);
  p.norm2_g = s.create(prefix + ".norm2.weight", {dim}, Init::kOnes, rng);
  p.norm2_b = s.create(prefix + ".norm2.bias", {dim}, Init::kZeros, rng);
  return p;
}

template <typename T>
DownParams<T> DownParams<T>::create(ParamStore<T>& s, const std::string& prefix, std::int64_t dim,
                                    DownsampleMode mode, Rng& rng) {
  DownParams p;
  if (mode == DownsampleMode::kConvStride2) {
    p.w = s.create(prefix + ".conv.weight", {2 * dim, dim, 2, 2, 2}, Init::kTruncNormal, rng, fan_in_std(8 * dim));
    p.b = s.create(prefix + ".conv.bias", {2 * dim}, Init::kZeros, rng);
    p.norm_g = s.create(prefix + ".norm.weight", {2 * dim}, Init::kOnes, rng);
    p.norm_b = s.create(prefix + ".norm.bias", {2 * dim}, Init::kZeros, rng);
  } else {
    p.w = s.create(prefix + ".reduction.weight", {8 * dim, 2 * dim}, Init::kTruncNormal, rng, fan_in_std(8 * dim));
    p.b = s.create(prefix + ".reduction.bias", {2 * dim}, Init::kZeros, rng);
  }
  return p;
}

template <typename T>
UpParams<T> UpParams<T>::create(ParamStore<T>& s, const std::string& prefix, std::int64_t dim, UpsampleMode mode,
                                Rng& rng) {
  if (dim % 2 != 0) throw ConfigError("upsampling needs an even channel count, got " + std::to_string(dim));
  UpParams p;
  switch (mode) {
    case UpsampleMode::kTransposedConv:
      p.w = s.create(prefix + ".deconv.weight", {dim, dim / 2, 2, 2, 2}, Init::kTruncNormal, rng, fan_in_std(dim));
      p.b = s.create(prefix + ".deconv.bias", {dim / 2}, Init::kZeros, rng);
      break;
    case UpsampleMode::kTrilinear:
      p.w = s.create(prefix + ".proj.weight", {dim, dim / 2}, Init::kTruncNormal, rng, fan_in_std(dim));
      p.b = s.create(prefix + ".proj.bias", {dim / 2}, Init::kZeros, rng);
      break;
    case UpsampleMode::kPatchExpand:
      p.w = s.create(prefix + ".expand.weight", {dim, 4 * dim}, Init::kTruncNormal, rng, fan_in_std(dim));
      p.b = s.create(prefix + ".expand.bias", {4 * dim}, Init::kZeros, rng);
      break;
  }
  return p;
}

template <typename T>
LocalParams<T> LocalParams<T>::create(ParamStore<T>& s, const std::string& prefix, std::int64_t channels, int kernel,
                                      Rng& rng) {
  const std::int64_t k = kernel, c = channels;
  LocalParams p;
  p.conv1_w = s.create(prefix + ".conv1.weight", {c, 1, k, k, k}, Init::kTruncNormal, rng, fan_in_std(k * k * k));
  p.conv1_b = s.create(prefix + ".conv1.bias", {c}, Init::kZeros, rng);
  p.norm1_g = s.create(prefix + ".norm1.weight", {c}, Init::kOnes, rng);
  p.norm1_b = s.create(prefix + ".norm1.bias", {c}, Init::kZeros, rng);
  p.conv2_w = s.create(prefix + ".conv2.weight", {c, c, k, k, k}, Init::kTruncNormal, rng,
                       fan_in_std(c * k * k * k));
  p.conv2_b = s.create(prefix + ".conv2.bias", {c}, Init::kZeros, rng);
  p.norm2_g = s.create(prefix + ".norm2.weight", {c}, Init::kOnes, rng);
  p.norm2_b = s.create(prefix + ".norm2.bias", {c}, Init::kZeros, rng);
  return p;
}

namespace {

// conv -> GELU -> LayerNorm over channels; returns channel-last.
template <typename T>
Var<T> conv_gelu_norm(const Var<T>& x, const Var<T>& w, const Var<T>& b, const Var<T>& g, const Var<T>& beta,
                      int stride, int pad) {
  return layer_norm(to_channels_last(gelu(conv3d(x, w, b, stride, pad))), g, beta);
}

std::int64_t row_of(const Grid3& g, std::int64_t x, std::int64_t y, std::int64_t z) {
  return (x * g[1] + y) * g[2] + z;
}

// For every coarse token, the rows of its 2×2×2 fine neighbours in raster order.
IndexList merge_index(const Grid3& fine) {
  const Grid3 c{fine[0] / 2, fine[1] / 2, fine[2] / 2};
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(volume_of(fine)));
  for (std::int64_t x = 0; x < c[0]; ++x)
    for (std::int64_t y = 0; y < c[1]; ++y)
      for (std::int64_t z = 0; z < c[2]; ++z)
        for (int o = 0; o < 8; ++o) idx->push_back(row_of(fine, 2 * x + (o >> 2), 2 * y + (o >> 1 & 1), 2 * z + (o & 1)));
  return idx;
}

// For every fine token, the sub-row (coarse token, octant) it is expanded from.
IndexList expand_index(const Grid3& coarse) {
  const Grid3 f{coarse[0] * 2, coarse[1] * 2, coarse[2] * 2};
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(volume_of(f)));
  for (std::int64_t x = 0; x < f[0]; ++x)
    for (std::int64_t y = 0; y < f[1]; ++y)
      for (std::int64_t z = 0; z < f[2]; ++z) {
        const std::int64_t o = ((x & 1) << 2) | ((y & 1) << 1) | (z & 1);
        idx->push_back(row_of(coarse, x / 2, y / 2, z / 2) * 8 + o);
      }
  return idx;
}

template <typename T>
Grid3 grid_of(const Var<T>& t, const char* what) {
  if (t.value().rank() != 4) throw DimensionError(std::string(what) + " expects [h,w,d,C], got " + shape_str(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2)};
}

}  // namespace

template <typename T>
Var<T> patch_embed(const Var<T>& x, const EmbedParams<T>& p) {
  if (x.value().rank() != 4 || x.dim(0) != 1) {
    throw DimensionError("patch_embed expects [1,H,W,D], got " + shape_str(x.shape()));
  }
  for (int a = 1; a <= 3; ++a) {
    if (x.dim(a) % 4 != 0) throw DimensionError("patch_embed: extents of " + shape_str(x.shape()) + " must be multiples of 4");
  }
  const int k = static_cast<int>(p.conv1_w.dim(2));
  const int pad = (k - 1) / 2;
  Var<T> h = conv_gelu_norm(x, p.conv1_w, p.conv1_b, p.norm1_g, p.norm1_b, 2, pad);
  return conv_gelu_norm(to_channels_first(h), p.conv2_w, p.conv2_b, p.norm2_g, p.norm2_b, 2, pad);
}

template <typename T>
Var<T> downsample(const Var<T>& t, const DownParams<T>& p, DownsampleMode mode) {
  const Grid3 g = grid_of(t, "downsample");
  for (auto e : g) {
    if (e % 2 != 0) throw DimensionError("downsample needs even grid extents, got " + grid_str(g));
  }
  const std::int64_t c = t.dim(3);
  if (mode == DownsampleMode::kConvStride2) {
    return conv_gelu_norm(to_channels_first(t), p.w, p.b, p.norm_g, p.norm_b, 2, 0);
  }
  Var<T> merged = gather_rows(t, c, merge_index(g), {g[0] / 2, g[1] / 2, g[2] / 2, 8 * c});
  return linear(merged, p.w, p.b);
}

template <typename T>
Var<T> upsample(const Var<T>& t, const UpParams<T>& p, UpsampleMode mode) {
  const Grid3 g = grid_of(t, "upsample");
  const std::int64_t c = t.dim(3);
  switch (mode) {
    case UpsampleMode::kTransposedConv:
      return to_channels_last(conv_transpose3d(to_channels_first(t), p.w, p.b, 2, 0));
    case UpsampleMode::kTrilinear:
      return linear(trilinear_upsample2(t), p.w, p.b);
    case UpsampleMode::kPatchExpand: {
      Var<T> e = linear(t, p.w, p.b);
      return gather_rows(e, c / 2, expand_index(g), {2 * g[0], 2 * g[1], 2 * g[2], c / 2});
    }
  }
  throw InternalError("unhandled upsample mode");
}

template <typename T>
Var<T> local_feature_path(const Var<T>& x, const LocalParams<T>& p, int kernel) {
  const int pad = kernel / 2;
  Var<T> h = conv_gelu_norm(x, p.conv1_w, p.conv1_b, p.norm1_g, p.norm1_b, 1, pad);
  return conv_gelu_norm(to_channels_first(h), p.conv2_w, p.conv2_b, p.norm2_g, p.norm2_b, 1, pad);
}

template <typename T>
Network<T>::Network(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), plan_(make_stage_plan(cfg)) {
  Rng rng(seed);
  const std::int64_t c = cfg.embed_dim;
  embed_ = EmbedParams<T>::create(store_, "embed", c, cfg.embed_kernel, rng);
  if (cfg.local_path) local_ = LocalParams<T>::create(store_, "local", cfg.local_channels, cfg.local_kernel, rng);

  auto attn_cfg = [&](int l) {
    AttentionConfig a;
    a.dim = plan_.levels[l].channels;
    a.heads = cfg.heads[l];
    a.mode = cfg.position;
    a.window = cfg.window;
    a.add_absolute = cfg.add_absolute;
    a.mlp_ratio = cfg.mlp_ratio;
    return a;
  };
  auto make_pairs = [&](const std::string& prefix, int n, const AttentionConfig& a) {
    std::vector<PairParams<T>> v;
    for (int i = 0; i < n; ++i) v.push_back(PairParams<T>::create(store_, prefix + ".pair" + std::to_string(i), a, a, rng));
    return v;
  };

  levels_.resize(static_cast<std::size_t>(cfg.levels));
  for (int l = 0; l < cfg.levels; ++l) {
    Level& lv = levels_[l];
    const auto& lp = plan_.levels[l];
    const std::string tag = std::to_string(l);
    lv.attn = attn_cfg(l);
    lv.regular = make_window_plan(lp.grid, cfg.window, false);
    lv.shifted = make_window_plan(lp.grid, cfg.window, true);
    lv.enc = make_pairs("enc" + tag, lp.encoder_pairs, lv.attn);
    lv.down = DownParams<T>::create(store_, "down" + tag, lp.channels, cfg.downsample, rng);
  }
  const int b = cfg.levels;
  bottleneck_attn_ = attn_cfg(b);
  bottleneck_regular_ = make_window_plan(plan_.levels[b].grid, cfg.window, false);
  bottleneck_shifted_ = make_window_plan(plan_.levels[b].grid, cfg.window, true);
  bottleneck_ = make_pairs("bottleneck", plan_.bottleneck_pairs, bottleneck_attn_);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    Level& lv = levels_[l];
    const std::int64_t ch = plan_.levels[l].channels;
    const std::string tag = std::to_string(l);
    lv.up = UpParams<T>::create(store_, "up" + tag, 2 * ch, cfg.upsample, rng);
    lv.fuse_w = store_.create("dec" + tag + ".fuse.weight", {2 * ch, ch}, Init::kTruncNormal, rng,
                                 fan_in_std(2 * ch));
    lv.fuse_b = store_.create("dec" + tag + ".fuse.bias", {ch}, Init::kZeros, rng);
    lv.dec = make_pairs("dec" + tag, plan_.levels[l].decoder_pairs, lv.attn);
  }
  final_up1_ = UpParams<T>::create(store_, "final_up1", c, cfg.upsample, rng);
  final_up2_ = UpParams<T>::create(store_, "final_up2", c / 2, cfg.upsample, rng);
  const std::int64_t head_in = c / 4 + (cfg.local_path ? cfg.local_channels : 0);
  head_w_ = store_.create("head.weight", {head_in, cfg.num_classes}, Init::kTruncNormal, rng,
                          fan_in_std(head_in));
  head_b_ = store_.create("head.bias", {cfg.num_classes}, Init::kZeros, rng);
}

template <typename T>
Var<T> Network<T>::run_pairs(Var<T> t, const std::vector<PairParams<T>>& pairs, const AttentionConfig& a,
                             const WindowPlan& r, const WindowPlan& s) const {
  for (const auto& p : pairs) t = transformer_block_pair(t, p, a, a, r, s);
  return t;
}

template <typename T>
Var<T> Network<T>::logits(const Tensor<T>& patch) const {
  if (patch.rank() != 3 || patch.dim(0) != cfg_.patch[0] || patch.dim(1) != cfg_.patch[1] ||
      patch.dim(2) != cfg_.patch[2]) {
    throw DimensionError("network expects a patch of " + grid_str(cfg_.patch) + ", got " + shape_str(patch.shape()));
  }
  Var<T> x(patch.reshaped({1, patch.dim(0), patch.dim(1), patch.dim(2)}));
  Var<T> t = patch_embed(x, embed_);
  std::vector<Var<T>> skips;
  for (const Level& lv : levels_) {
    t = run_pairs(t, lv.enc, lv.attn, lv.regular, lv.shifted);
    skips.push_back(t);
    t = downsample(t, lv.down, cfg_.downsample);
  }
  t = run_pairs(t, bottleneck_, bottleneck_attn_, bottleneck_regular_, bottleneck_shifted_);
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    const Level& lv = levels_[l];
    t = upsample(t, lv.up, cfg_.upsample);
    t = linear(concat_lastdim(t, skips[l]), lv.fuse_w, lv.fuse_b);
    t = run_pairs(t, lv.dec, lv.attn, lv.regular, lv.shifted);
  }
  t = upsample(upsample(t, final_up1_, cfg_.upsample), final_up2_, cfg_.upsample);
  if (cfg_.local_path) t = concat_lastdim(t, local_feature_path(x, local_, cfg_.local_kernel));
  return linear(t, head_w_, head_b_);
}

template <typename T>
Var<T> Network<T>::forward(const Tensor<T>& patch) const {
  return to_channels_first(softmax_lastdim(logits(patch)));
}

template <typename T>
Var<T> Network<T>::foreground(const Tensor<T>& patch) const {
  Var<T> p = slice_lastdim(softmax_lastdim(logits(patch)), 1, 2);
  return reshape(p, {patch.dim(0), patch.dim(1), patch.dim(2)});
}

#define IBV_INSTANTIATE_NETWORK(T)                                                           \
  template struct EmbedParams<T>;                                                            \
  template struct DownParams<T>;                                                             \
  template struct UpParams<T>;                                                               \
  template struct LocalParams<T>;                                                            \
  template Var<T> patch_embed(const Var<T>&, const EmbedParams<T>&);                         \
  template Var<T> downsample(const Var<T>&, const DownParams<T>&, DownsampleMode);           \
  template Var<T> upsample(const Var<T>&, const UpParams<T>&, UpsampleMode);                 \
  template Var<T> local_feature_path(const Var<T>&, const LocalParams<T>&, int);             \
  template class Network<T>;

IBV_INSTANTIATE_NETWORK(float)
IBV_INSTANTIATE_NETWORK(double)

}  // namespace ibv
