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
#include <memory>
#include <vector>

#include "ibimhav/autograd.hpp"

// Differentiable operations over Var<T>. Each op validates shapes, computes
// its value eagerly and registers a backward closure when recording.
namespace ibv {

using IndexList = std::shared_ptr<const std::vector<std::int64_t>>;

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

// y = x·w + b over the last axis. x: [..., in], w: [in, out], b: [out] or undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// Exact erf form x·Φ(x).
template <typename T> Var<T> gelu(const Var<T>& x);

// Normalizes every row of the last axis, then applies gamma/beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

template <typename T> Var<T> softmax_lastdim(const Var<T>& x);

// [C, s...] <-> [s..., C]
template <typename T> Var<T> to_channels_last(const Var<T>& x);
template <typename T> Var<T> to_channels_first(const Var<T>& x);

// Cross-correlation. x: [Cin,H,W,D], w: [Cout,Cin,k,k,k], b: [Cout] or undefined.
// Output extent per axis is floor((n + 2·pad − k)/stride) + 1.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad);

// Adjoint of conv3d with the same weight tensor. x: [Cout,H,W,D],
// w: [Cout,Cin,k,k,k] -> [Cin, (H−1)·stride − 2·pad + k, ...].
template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad);

// Views x as rows of `row` elements and picks rows by index (−1 gives a zero
// row). Output element count must equal idx.size()·row.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::int64_t row, IndexList idx, Shape out_shape);

// x + e where e is tiled over the leading elements of x.
template <typename T> Var<T> add_broadcast(const Var<T>& x, const Var<T>& e);

template <typename T> Var<T> concat_lastdim(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice_lastdim(const Var<T>& x, std::int64_t begin, std::int64_t end);

// Doubles every spatial extent of a channel-last grid [h,w,d,C] by trilinear
// interpolation (half-pixel centres, edge clamped).
template <typename T> Var<T> trilinear_upsample2(const Var<T>& x);

// Batched multi-head attention over windows.
//   q,k,v: [N, P, C] (or [P, C]), C split into `heads` contiguous groups.
//   bias:  [heads, P, P] or undefined.
//   mask:  [Nm, P, P] additive, window n uses mask[n % Nm]; empty for none.
// softmax(q·kᵀ/√d + bias + mask)·v per head.
template <typename T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias,
                            const Tensor<T>& mask, int heads, Tensor<T>* weights_out = nullptr);

// 1 − M(β) with M(β) = (I + eps) / (I + 0.5β(FP + FN) + eps), where
// I = Σp·g, FP = Σp·(1−g), FN = Σ(1−p)·g. Empty-vs-empty gives loss 0.
template <typename T>
Var<T> weighted_dice_loss(const Var<T>& p0, const Tensor<T>& g0, T beta, T eps);

}  // namespace ibv
