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

#include <Eigen/Core>
#include <algorithm>

#include "ibimhav/ops.hpp"

namespace ibv {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

struct Geometry {
  std::int64_t channels;      // channels of the dense (input-side) grid
  std::int64_t in[3];         // dense grid extents
  std::int64_t out[3];        // strided grid extents
  std::int64_t k, stride, pad;

  std::int64_t in_size() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_size() const { return out[0] * out[1] * out[2]; }
  std::int64_t plane() const { return out[1] * out[2]; }
  std::int64_t rows() const { return channels * k * k * k; }
};

// Columns for one output plane (fixed first strided coordinate `ox`).
// cols: [channels·k³, out[1]·out[2]] row-major.
template <typename T>
void im2col_plane(const T* src, const Geometry& g, std::int64_t ox, T* cols) {
  const std::int64_t pl = g.plane();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* sc = src + c * g.in_size();
    for (std::int64_t a = 0; a < g.k; ++a) {
      const std::int64_t ix = ox * g.stride - g.pad + a;
      const bool xin = ix >= 0 && ix < g.in[0];
      for (std::int64_t b = 0; b < g.k; ++b) {
        for (std::int64_t e = 0; e < g.k; ++e) {
          T* row = cols + (((c * g.k + a) * g.k + b) * g.k + e) * pl;
          if (!xin) {
            std::fill(row, row + pl, T(0));
            continue;
          }
          for (std::int64_t oy = 0; oy < g.out[1]; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + b;
            T* r = row + oy * g.out[2];
            if (iy < 0 || iy >= g.in[1]) {
              std::fill(r, r + g.out[2], T(0));
              continue;
            }
            const T* line = sc + (ix * g.in[1] + iy) * g.in[2];
            for (std::int64_t oz = 0; oz < g.out[2]; ++oz) {
              const std::int64_t iz = oz * g.stride - g.pad + e;
              r[oz] = (iz >= 0 && iz < g.in[2]) ? line[iz] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_plane(const T* cols, const Geometry& g, std::int64_t ox, T* dst) {
  const std::int64_t pl = g.plane();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* dc = dst + c * g.in_size();
    for (std::int64_t a = 0; a < g.k; ++a) {
      const std::int64_t ix = ox * g.stride - g.pad + a;
      if (ix < 0 || ix >= g.in[0]) continue;
      for (std::int64_t b = 0; b < g.k; ++b) {
        for (std::int64_t e = 0; e < g.k; ++e) {
          const T* row = cols + (((c * g.k + a) * g.k + b) * g.k + e) * pl;
          for (std::int64_t oy = 0; oy < g.out[1]; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + b;
            if (iy < 0 || iy >= g.in[1]) continue;
            const T* r = row + oy * g.out[2];
            T* line = dc + (ix * g.in[1] + iy) * g.in[2];
            for (std::int64_t oz = 0; oz < g.out[2]; ++oz) {
              const std::int64_t iz = oz * g.stride - g.pad + e;
              if (iz >= 0 && iz < g.in[2]) line[iz] += r[oz];
            }
          }
        }
      }
    }
  }
}

void check_kernel(const char* op, const Shape& w, int stride, int pad) {
  if (w.size() != 5 || w[2] != w[3] || w[2] != w[4]) {
    throw DimensionError(std::string(op) + ": weight must be [Co,Ci,k,k,k], got " + shape_str(w));
  }
  if (stride < 1 || pad < 0) {
    throw DimensionError(std::string(op) + ": invalid stride " + std::to_string(stride) + " / pad " +
                         std::to_string(pad));
  }
}

template <typename T>
void add_channel_bias(Tensor<T>& out, const Var<T>& b, std::int64_t channels, std::int64_t spatial) {
  if (!b.defined()) return;
  if (b.value().size() != static_cast<std::size_t>(channels)) {
    throw DimensionError("conv bias " + shape_str(b.shape()) + " does not match " + std::to_string(channels) +
                         " channels");
  }
  for (std::int64_t c = 0; c < channels; ++c) {
    T* o = out.ptr() + c * spatial;
    const T bv = b.value()[c];
    for (std::int64_t i = 0; i < spatial; ++i) o[i] += bv;
  }
}

template <typename T>
void channel_bias_grad(const Tensor<T>& dy, const Var<T>& b, std::int64_t channels, std::int64_t spatial) {
  if (!b.defined() || !b.requires_grad()) return;
  Tensor<T> gb(b.shape());
  for (std::int64_t c = 0; c < channels; ++c) {
    T s = 0;
    const T* d = dy.ptr() + c * spatial;
    for (std::int64_t i = 0; i < spatial; ++i) s += d[i];
    gb[c] = s;
  }
  accumulate_grad(b.node(), gb);
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  check_kernel("conv3d", w.shape(), stride, pad);
  if (x.value().rank() != 4 || x.dim(0) != w.dim(1)) {
    throw DimensionError("conv3d: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  const std::int64_t k = w.dim(2);
  const std::int64_t cout = w.dim(0);
  Geometry g{x.dim(0), {x.dim(1), x.dim(2), x.dim(3)}, {0, 0, 0}, k, stride, pad};
  for (int a = 0; a < 3; ++a) {
    if (g.in[a] + 2 * pad < k) {
      throw DimensionError("conv3d: kernel " + std::to_string(k) + " larger than padded input " + shape_str(x.shape()));
    }
    g.out[a] = (g.in[a] + 2 * pad - k) / stride + 1;
  }
  const std::int64_t pl = g.plane();
  const std::int64_t osz = g.out_size();
  Tensor<T> out(Shape{cout, g.out[0], g.out[1], g.out[2]});
  Storage<T> cols(static_cast<std::size_t>(g.rows() * pl));
  CMapMat<T> W(w.value().ptr(), cout, g.rows());
  for (std::int64_t ox = 0; ox < g.out[0]; ++ox) {
    im2col_plane(x.value().ptr(), g, ox, cols.data());
    StridedMap<T>(out.ptr() + ox * pl, cout, pl, Eigen::OuterStride<>(osz)).noalias() =
        W * CMapMat<T>(cols.data(), g.rows(), pl);
  }
  add_channel_bias(out, b, cout, osz);
  return make_result<T>(std::move(out), {x, w, b}, [x, w, b, g, cout](Node<T>& n) {
    const std::int64_t pl = g.plane();
    const std::int64_t osz = g.out_size();
    channel_bias_grad(n.grad, b, cout, osz);
    Tensor<T> gx = x.requires_grad() ? Tensor<T>(x.shape()) : Tensor<T>();
    Tensor<T> gw = w.requires_grad() ? Tensor<T>(w.shape()) : Tensor<T>();
    Storage<T> cols(static_cast<std::size_t>(g.rows() * pl));
    CMapMat<T> W(w.value().ptr(), cout, g.rows());
    for (std::int64_t ox = 0; ox < g.out[0]; ++ox) {
      CStridedMap<T> dy(n.grad.ptr() + ox * pl, cout, pl, Eigen::OuterStride<>(osz));
      if (!gw.empty()) {
        im2col_plane(x.value().ptr(), g, ox, cols.data());
        MapMat<T>(gw.ptr(), cout, g.rows()).noalias() += dy * CMapMat<T>(cols.data(), g.rows(), pl).transpose();
      }
      if (!gx.empty()) {
        MapMat<T>(cols.data(), g.rows(), pl).noalias() = W.transpose() * dy;
        col2im_plane(cols.data(), g, ox, gx.ptr());
      }
    }
    if (!gx.empty()) accumulate_grad(x.node(), gx);
    if (!gw.empty()) accumulate_grad(w.node(), gw);
  });
}

template <typename T>
Var<T> conv_transpose3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  check_kernel("conv_transpose3d", w.shape(), stride, pad);
  if (x.value().rank() != 4 || x.dim(0) != w.dim(0)) {
    throw DimensionError("conv_transpose3d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const std::int64_t k = w.dim(2);
  const std::int64_t cin = w.dim(0);   // channels of x
  const std::int64_t cout = w.dim(1);  // channels of the dense output
  Geometry g{cout, {0, 0, 0}, {x.dim(1), x.dim(2), x.dim(3)}, k, stride, pad};
  for (int a = 0; a < 3; ++a) {
    g.in[a] = (g.out[a] - 1) * stride - 2 * pad + k;
    if (g.in[a] < 1) {
      throw DimensionError("conv_transpose3d: non-positive output extent for input " + shape_str(x.shape()));
    }
  }
  const std::int64_t pl = g.plane();
  const std::int64_t xsz = g.out_size();
  Tensor<T> out(Shape{cout, g.in[0], g.in[1], g.in[2]});
  Storage<T> cols(static_cast<std::size_t>(g.rows() * pl));
  CMapMat<T> W(w.value().ptr(), cin, g.rows());
  for (std::int64_t ox = 0; ox < g.out[0]; ++ox) {
    CStridedMap<T> xs(x.value().ptr() + ox * pl, cin, pl, Eigen::OuterStride<>(xsz));
    MapMat<T>(cols.data(), g.rows(), pl).noalias() = W.transpose() * xs;
    col2im_plane(cols.data(), g, ox, out.ptr());
  }
  add_channel_bias(out, b, cout, g.in_size());
  return make_result<T>(std::move(out), {x, w, b}, [x, w, b, g, cin, cout](Node<T>& n) {
    const std::int64_t pl = g.plane();
    const std::int64_t xsz = g.out_size();
    channel_bias_grad(n.grad, b, cout, g.in_size());
    Tensor<T> gx = x.requires_grad() ? Tensor<T>(x.shape()) : Tensor<T>();
    Tensor<T> gw = w.requires_grad() ? Tensor<T>(w.shape()) : Tensor<T>();
    Storage<T> cols(static_cast<std::size_t>(g.rows() * pl));
    CMapMat<T> W(w.value().ptr(), cin, g.rows());
    for (std::int64_t ox = 0; ox < g.out[0]; ++ox) {
      im2col_plane(n.grad.ptr(), g, ox, cols.data());
      CMapMat<T> dc(cols.data(), g.rows(), pl);
      if (!gx.empty()) {
        StridedMap<T>(gx.ptr() + ox * pl, cin, pl, Eigen::OuterStride<>(xsz)).noalias() = W * dc;
      }
      if (!gw.empty()) {
        CStridedMap<T> xs(x.value().ptr() + ox * pl, cin, pl, Eigen::OuterStride<>(xsz));
        MapMat<T>(gw.ptr(), cin, g.rows()).noalias() += xs * dc.transpose();
      }
    }
    if (!gx.empty()) accumulate_grad(x.node(), gx);
    if (!gw.empty()) accumulate_grad(w.node(), gw);
  });
}

template Var<float> conv3d(const Var<float>&, const Var<float>&, const Var<float>&, int, int);
template Var<double> conv3d(const Var<double>&, const Var<double>&, const Var<double>&, int, int);
template Var<float> conv_transpose3d(const Var<float>&, const Var<float>&, const Var<float>&, int, int);
template Var<double> conv_transpose3d(const Var<double>&, const Var<double>&, const Var<double>&, int, int);

}  // namespace ibv
