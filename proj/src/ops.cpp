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

#include "ibimhav/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace ibv {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
T normal_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T normal_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    accumulate_grad(a.node(), n.grad);
    accumulate_grad(b.node(), n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    accumulate_grad(a.node(), n.grad);
    if (b.requires_grad()) {
      Tensor<T> g = n.grad;
      for (auto& e : g.data()) e = -e;
      accumulate_grad(b.node(), g);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad()) {
      Tensor<T> g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= b.value()[i];
      accumulate_grad(a.node(), g);
    }
    if (b.requires_grad()) {
      Tensor<T> g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= a.value()[i];
      accumulate_grad(b.node(), g);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& e : out.data()) e *= s;
  return make_result<T>(std::move(out), {a}, [a, s](Node<T>& n) {
    Tensor<T> g = n.grad;
    for (auto& e : g.data()) e *= s;
    accumulate_grad(a.node(), g);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (auto e : a.value().data()) s += e;
  return make_result<T>(Tensor<T>::scalar(s), {a}, [a](Node<T>& n) {
    Tensor<T> g(a.shape(), n.grad[0]);
    accumulate_grad(a.node(), g);
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [a](Node<T>& n) {
    accumulate_grad(a.node(), n.grad.reshaped(a.shape()));
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (w.value().rank() != 2) throw DimensionError("linear: weight must be 2-D, got " + shape_str(w.shape()));
  const std::int64_t in = w.dim(0);
  const std::int64_t outd = w.dim(1);
  if (x.value().rank() < 1 || x.dim(-1) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  if (b.defined() && (b.value().rank() != 1 || b.dim(0) != outd)) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  const std::int64_t rows = numel(x.shape()) / in;
  Shape oshape = x.shape();
  oshape.back() = outd;
  Tensor<T> out(oshape);
  CMapMat<T> X(x.value().ptr(), rows, in);
  CMapMat<T> W(w.value().ptr(), in, outd);
  MapMat<T> Y(out.ptr(), rows, outd);
  Y.noalias() = X * W;
  if (b.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b.value().ptr(), outd);
    Y.rowwise() += B;
  }
  MacCounter::add(static_cast<std::uint64_t>(rows * in * outd));
  return make_result<T>(std::move(out), {x, w, b}, [x, w, b, rows, in, outd](Node<T>& n) {
    CMapMat<T> dY(n.grad.ptr(), rows, outd);
    if (x.requires_grad()) {
      Tensor<T> gx(x.shape());
      MapMat<T>(gx.ptr(), rows, in).noalias() = dY * CMapMat<T>(w.value().ptr(), in, outd).transpose();
      accumulate_grad(x.node(), gx);
    }
    if (w.requires_grad()) {
      Tensor<T> gw(w.shape());
      MapMat<T>(gw.ptr(), in, outd).noalias() = CMapMat<T>(x.value().ptr(), rows, in).transpose() * dY;
      accumulate_grad(w.node(), gw);
    }
    if (b.defined() && b.requires_grad()) {
      Tensor<T> gb(b.shape());
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.ptr(), outd) = dY.colwise().sum();
      accumulate_grad(b.node(), gb);
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& e : out.data()) e = e * normal_cdf(e);
  return make_result<T>(std::move(out), {x}, [x](Node<T>& n) {
    Tensor<T> g = n.grad;
    const auto& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= normal_cdf(xv[i]) + xv[i] * normal_pdf(xv[i]);
    accumulate_grad(x.node(), g);
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::int64_t c = x.dim(-1);
  if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c)) {
    throw DimensionError("layer_norm: affine length " + shape_str(gamma.shape()) + " vs channels " +
                         std::to_string(c));
  }
  const std::int64_t rows = numel(x.shape()) / c;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* xp = x.value().ptr();
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xp + r * c;
    T mu = 0;
    for (std::int64_t i = 0; i < c; ++i) mu += row[i];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::int64_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(c);
    // eps = 0 on a constant row would divide by zero; such rows normalize to 0.
    const T denom = std::sqrt(var + eps);
    const T rs = denom > T(0) ? T(1) / denom : T(0);
    (*rstd)[r] = rs;
    for (std::int64_t i = 0; i < c; ++i) {
      const T h = (row[i] - mu) * rs;
      (*xhat)[r * c + i] = h;
      out[r * c + i] = h * gp[i] + bp[i];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, rstd, rows, c](Node<T>& n) {
    const T* dy = n.grad.ptr();
    const T* gp = gamma.value().ptr();
    if (gamma.requires_grad() || beta.requires_grad()) {
      Tensor<T> gg(gamma.shape()), gb(beta.shape());
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t i = 0; i < c; ++i) {
          gg[i] += dy[r * c + i] * (*xhat)[r * c + i];
          gb[i] += dy[r * c + i];
        }
      }
      accumulate_grad(gamma.node(), gg);
      accumulate_grad(beta.node(), gb);
    }
    if (x.requires_grad()) {
      Tensor<T> gx(x.shape());
      std::vector<T> dh(c);
      for (std::int64_t r = 0; r < rows; ++r) {
        T m1 = 0, m2 = 0;
        for (std::int64_t i = 0; i < c; ++i) {
          dh[i] = dy[r * c + i] * gp[i];
          m1 += dh[i];
          m2 += dh[i] * (*xhat)[r * c + i];
        }
        m1 /= static_cast<T>(c);
        m2 /= static_cast<T>(c);
        for (std::int64_t i = 0; i < c; ++i) {
          gx[r * c + i] = (*rstd)[r] * (dh[i] - m1 - (*xhat)[r * c + i] * m2);
        }
      }
      accumulate_grad(x.node(), gx);
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const std::int64_t c = x.dim(-1);
  if (c < 1) throw DimensionError("softmax_lastdim: empty last axis");
  const std::int64_t rows = numel(x.shape()) / c;
  Tensor<T> out(x.shape());
  const T* xp = x.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xp + r * c;
    T* o = out.ptr() + r * c;
    const T m = *std::max_element(row, row + c);
    T s = 0;
    for (std::int64_t i = 0; i < c; ++i) {
      o[i] = std::exp(row[i] - m);
      s += o[i];
    }
    for (std::int64_t i = 0; i < c; ++i) o[i] /= s;
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {x}, [x, y, rows, c](Node<T>& n) {
    Tensor<T> g(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* yr = y->ptr() + r * c;
      const T* dy = n.grad.ptr() + r * c;
      T dot = 0;
      for (std::int64_t i = 0; i < c; ++i) dot += dy[i] * yr[i];
      for (std::int64_t i = 0; i < c; ++i) g[r * c + i] = yr[i] * (dy[i] - dot);
    }
    accumulate_grad(x.node(), g);
  });
}

namespace {

template <typename T>
Tensor<T> transpose2(const Tensor<T>& src, std::int64_t rows, std::int64_t cols, Shape out_shape) {
  Tensor<T> out(std::move(out_shape));
  MapMat<T>(out.ptr(), cols, rows) = CMapMat<T>(src.ptr(), rows, cols).transpose();
  return out;
}

}  // namespace

template <typename T>
Var<T> to_channels_last(const Var<T>& x) {
  if (x.value().rank() < 2) throw DimensionError("to_channels_last: rank < 2 for " + shape_str(x.shape()));
  const std::int64_t c = x.dim(0);
  const std::int64_t s = numel(x.shape()) / c;
  Shape os(x.shape().begin() + 1, x.shape().end());
  os.push_back(c);
  return make_result<T>(transpose2(x.value(), c, s, os), {x}, [x, c, s](Node<T>& n) {
    accumulate_grad(x.node(), transpose2(n.grad, s, c, x.shape()));
  });
}

template <typename T>
Var<T> to_channels_first(const Var<T>& x) {
  if (x.value().rank() < 2) throw DimensionError("to_channels_first: rank < 2 for " + shape_str(x.shape()));
  const std::int64_t c = x.dim(-1);
  const std::int64_t s = numel(x.shape()) / c;
  Shape os{c};
  os.insert(os.end(), x.shape().begin(), x.shape().end() - 1);
  return make_result<T>(transpose2(x.value(), s, c, os), {x}, [x, c, s](Node<T>& n) {
    accumulate_grad(x.node(), transpose2(n.grad, c, s, x.shape()));
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::int64_t row, IndexList idx, Shape out_shape) {
  if (row < 1 || numel(x.shape()) % row != 0) {
    throw DimensionError("gather_rows: row size " + std::to_string(row) + " does not divide " + shape_str(x.shape()));
  }
  const std::int64_t in_rows = numel(x.shape()) / row;
  const std::int64_t out_rows = static_cast<std::int64_t>(idx->size());
  if (numel(out_shape) != out_rows * row) {
    throw DimensionError("gather_rows: output shape " + shape_str(out_shape) + " does not hold " +
                         std::to_string(out_rows) + " rows of " + std::to_string(row));
  }
  Tensor<T> out(std::move(out_shape));
  const T* xp = x.value().ptr();
  for (std::int64_t r = 0; r < out_rows; ++r) {
    const std::int64_t s = (*idx)[r];
    if (s < 0) continue;
    if (s >= in_rows) throw InternalError("gather_rows: index " + std::to_string(s) + " out of range");
    std::copy(xp + s * row, xp + (s + 1) * row, out.ptr() + r * row);
  }
  return make_result<T>(std::move(out), {x}, [x, row, idx, out_rows](Node<T>& n) {
    Tensor<T> g(x.shape());
    const T* dy = n.grad.ptr();
    for (std::int64_t r = 0; r < out_rows; ++r) {
      const std::int64_t s = (*idx)[r];
      if (s < 0) continue;
      T* dst = g.ptr() + s * row;
      for (std::int64_t i = 0; i < row; ++i) dst[i] += dy[r * row + i];
    }
    accumulate_grad(x.node(), g);
  });
}

template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& e) {
  const std::size_t m = e.value().size();
  if (m == 0 || x.value().size() % m != 0) {
    throw DimensionError("add_broadcast: " + shape_str(e.shape()) + " does not tile " + shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += e.value()[i % m];
  return make_result<T>(std::move(out), {x, e}, [x, e, m](Node<T>& n) {
    accumulate_grad(x.node(), n.grad);
    if (e.requires_grad()) {
      Tensor<T> g(e.shape());
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % m] += n.grad[i];
      accumulate_grad(e.node(), g);
    }
  });
}

template <typename T>
Var<T> concat_lastdim(const Var<T>& a, const Var<T>& b) {
  const std::int64_t ca = a.dim(-1), cb = b.dim(-1);
  Shape la(a.shape().begin(), a.shape().end() - 1), lb(b.shape().begin(), b.shape().end() - 1);
  if (la != lb) throw DimensionError("concat_lastdim: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t rows = numel(la);
  Shape os = la;
  os.push_back(ca + cb);
  Tensor<T> out(os);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().ptr() + r * ca, ca, out.ptr() + r * (ca + cb));
    std::copy_n(b.value().ptr() + r * cb, cb, out.ptr() + r * (ca + cb) + ca);
  }
  return make_result<T>(std::move(out), {a, b}, [a, b, rows, ca, cb](Node<T>& n) {
    Tensor<T> ga(a.shape()), gb(b.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(n.grad.ptr() + r * (ca + cb), ca, ga.ptr() + r * ca);
      std::copy_n(n.grad.ptr() + r * (ca + cb) + ca, cb, gb.ptr() + r * cb);
    }
    accumulate_grad(a.node(), ga);
    accumulate_grad(b.node(), gb);
  });
}

template <typename T>
Var<T> slice_lastdim(const Var<T>& x, std::int64_t begin, std::int64_t end) {
  const std::int64_t c = x.dim(-1);
  if (begin < 0 || end > c || begin >= end) {
    throw DimensionError("slice_lastdim: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::int64_t w = end - begin;
  const std::int64_t rows = numel(x.shape()) / c;
  Shape os = x.shape();
  os.back() = w;
  Tensor<T> out(os);
  for (std::int64_t r = 0; r < rows; ++r) std::copy_n(x.value().ptr() + r * c + begin, w, out.ptr() + r * w);
  return make_result<T>(std::move(out), {x}, [x, begin, w, c, rows](Node<T>& n) {
    Tensor<T> g(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) std::copy_n(n.grad.ptr() + r * w, w, g.ptr() + r * c + begin);
    accumulate_grad(x.node(), g);
  });
}

namespace {

struct Tap {
  std::int64_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 − w1
};

std::vector<Tap> upsample_taps(std::int64_t n) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (std::int64_t o = 0; o < 2 * n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    i0 = std::min(i0, n - 1);
    const std::int64_t i1 = std::min(i0 + 1, n - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> trilinear_upsample2(const Var<T>& x) {
  if (x.value().rank() != 4) throw DimensionError("trilinear_upsample2: expected [h,w,d,C], got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(0), w = x.dim(1), d = x.dim(2), c = x.dim(3);
  auto th = std::make_shared<std::vector<Tap>>(upsample_taps(h));
  auto tw = std::make_shared<std::vector<Tap>>(upsample_taps(w));
  auto td = std::make_shared<std::vector<Tap>>(upsample_taps(d));
  // Visits the 8 taps of every output token; f(out_offset, in_offset, weight).
  auto visit = [=](auto&& f) {
    for (std::int64_t a = 0; a < 2 * h; ++a) {
      const Tap& ta = (*th)[a];
      for (std::int64_t b = 0; b < 2 * w; ++b) {
        const Tap& tb = (*tw)[b];
        for (std::int64_t e = 0; e < 2 * d; ++e) {
          const Tap& te = (*td)[e];
          const std::int64_t o = ((a * 2 * w + b) * 2 * d + e) * c;
          for (int m = 0; m < 8; ++m) {
            const std::int64_t ia = (m & 4) ? ta.i1 : ta.i0;
            const std::int64_t ib = (m & 2) ? tb.i1 : tb.i0;
            const std::int64_t ie = (m & 1) ? te.i1 : te.i0;
            const double wt = ((m & 4) ? ta.w1 : 1 - ta.w1) * ((m & 2) ? tb.w1 : 1 - tb.w1) *
                              ((m & 1) ? te.w1 : 1 - te.w1);
            if (wt == 0) continue;
            f(o, ((ia * w + ib) * d + ie) * c, static_cast<T>(wt));
          }
        }
      }
    }
  };
  Tensor<T> out(Shape{2 * h, 2 * w, 2 * d, c});
  const T* xp = x.value().ptr();
  visit([&](std::int64_t o, std::int64_t i, T wt) {
    for (std::int64_t k = 0; k < c; ++k) out[o + k] += wt * xp[i + k];
  });
  return make_result<T>(std::move(out), {x}, [x, visit, c](Node<T>& n) {
    Tensor<T> g(x.shape());
    const T* dy = n.grad.ptr();
    visit([&](std::int64_t o, std::int64_t i, T wt) {
      for (std::int64_t k = 0; k < c; ++k) g[i + k] += wt * dy[o + k];
    });
    accumulate_grad(x.node(), g);
  });
}

template <typename T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias,
                            const Tensor<T>& mask, int heads, Tensor<T>* weights_out) {
  require_same_shape("attention(q,k)", q.shape(), k.shape());
  require_same_shape("attention(q,v)", q.shape(), v.shape());
  if (q.value().rank() < 2) throw DimensionError("attention: q must be [N,P,C], got " + shape_str(q.shape()));
  const std::int64_t c = q.dim(-1);
  const std::int64_t p = q.dim(-2);
  const std::int64_t nw = numel(q.shape()) / (p * c);
  if (heads < 1 || c % heads != 0) {
    throw ConfigError("attention: channels " + std::to_string(c) + " not divisible by heads " + std::to_string(heads));
  }
  const std::int64_t hd = c / heads;
  if (bias.defined() && bias.shape() != Shape{heads, p, p}) {
    throw DimensionError("attention: bias shape " + shape_str(bias.shape()) + " expected " +
                         shape_str(Shape{heads, p, p}));
  }
  std::int64_t nm = 0;
  if (!mask.empty()) {
    if (mask.rank() != 3 || mask.dim(1) != p || mask.dim(2) != p) {
      throw DimensionError("attention: mask shape " + shape_str(mask.shape()) + " incompatible with P=" +
                           std::to_string(p));
    }
    nm = mask.dim(0);
  }
  const T sc = T(1) / std::sqrt(static_cast<T>(hd));
  auto weights = std::make_shared<Tensor<T>>(Shape{nw, heads, p, p});
  Tensor<T> out(q.shape());
  const T* qp = q.value().ptr();
  const T* kp = k.value().ptr();
  const T* vp = v.value().ptr();
  const T* bp = bias.defined() ? bias.value().ptr() : nullptr;
  for (std::int64_t n = 0; n < nw; ++n) {
    const T* mp = nm ? mask.ptr() + (n % nm) * p * p : nullptr;
    for (std::int64_t h = 0; h < heads; ++h) {
      T* a = weights->ptr() + (n * heads + h) * p * p;
      for (std::int64_t i = 0; i < p; ++i) {
        const T* qi = qp + (n * p + i) * c + h * hd;
        T* ar = a + i * p;
        for (std::int64_t j = 0; j < p; ++j) {
          const T* kj = kp + (n * p + j) * c + h * hd;
          T s = 0;
          for (std::int64_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          s *= sc;
          if (bp) s += bp[(h * p + i) * p + j];
          if (mp) s += mp[i * p + j];
          ar[j] = s;
        }
        const T m = *std::max_element(ar, ar + p);
        T z = 0;
        for (std::int64_t j = 0; j < p; ++j) {
          ar[j] = std::exp(ar[j] - m);
          z += ar[j];
        }
        for (std::int64_t j = 0; j < p; ++j) ar[j] /= z;
        T* oi = out.ptr() + (n * p + i) * c + h * hd;
        for (std::int64_t j = 0; j < p; ++j) {
          const T* vj = vp + (n * p + j) * c + h * hd;
          for (std::int64_t t = 0; t < hd; ++t) oi[t] += ar[j] * vj[t];
        }
      }
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(2 * nw * p * p * c));
  if (weights_out) *weights_out = *weights;
  return make_result<T>(std::move(out), {q, k, v, bias}, [q, k, v, bias, weights, nw, heads, p, c, hd, sc](Node<T>& n) {
    Tensor<T> gq(q.shape()), gk(k.shape()), gv(v.shape());
    Tensor<T> gb = bias.defined() ? Tensor<T>(bias.shape()) : Tensor<T>();
    const T* qp = q.value().ptr();
    const T* kp = k.value().ptr();
    const T* vp = v.value().ptr();
    const T* dout = n.grad.ptr();
    std::vector<T> ds(static_cast<std::size_t>(p));
    for (std::int64_t w = 0; w < nw; ++w) {
      for (std::int64_t h = 0; h < heads; ++h) {
        const T* a = weights->ptr() + (w * heads + h) * p * p;
        for (std::int64_t i = 0; i < p; ++i) {
          const T* doi = dout + (w * p + i) * c + h * hd;
          const T* ar = a + i * p;
          // dA_ij = dO_i · V_j, then softmax backward.
          T dot = 0;
          for (std::int64_t j = 0; j < p; ++j) {
            const T* vj = vp + (w * p + j) * c + h * hd;
            T s = 0;
            for (std::int64_t t = 0; t < hd; ++t) s += doi[t] * vj[t];
            ds[j] = s;
            dot += s * ar[j];
            T* gvj = gv.ptr() + (w * p + j) * c + h * hd;
            for (std::int64_t t = 0; t < hd; ++t) gvj[t] += ar[j] * doi[t];
          }
          const T* qi = qp + (w * p + i) * c + h * hd;
          T* gqi = gq.ptr() + (w * p + i) * c + h * hd;
          for (std::int64_t j = 0; j < p; ++j) {
            const T dsj = ar[j] * (ds[j] - dot);
            if (!gb.empty()) gb[(h * p + i) * p + j] += dsj;
            const T* kj = kp + (w * p + j) * c + h * hd;
            T* gkj = gk.ptr() + (w * p + j) * c + h * hd;
            for (std::int64_t t = 0; t < hd; ++t) {
              gqi[t] += dsj * sc * kj[t];
              gkj[t] += dsj * sc * qi[t];
            }
          }
        }
      }
    }
    accumulate_grad(q.node(), gq);
    accumulate_grad(k.node(), gk);
    accumulate_grad(v.node(), gv);
    if (bias.defined()) accumulate_grad(bias.node(), gb);
  });
}

template <typename T>
Var<T> weighted_dice_loss(const Var<T>& p0, const Tensor<T>& g0, T beta, T eps) {
  if (p0.value().size() != g0.size()) {
    throw DimensionError("weighted_dice_loss: prediction " + shape_str(p0.shape()) + " vs truth " +
                         shape_str(g0.shape()));
  }
  double inter = 0, fp = 0, fn = 0;
  const T* p = p0.value().ptr();
  for (std::size_t i = 0; i < g0.size(); ++i) {
    inter += static_cast<double>(p[i]) * g0[i];
    fp += static_cast<double>(p[i]) * (1.0 - g0[i]);
    fn += (1.0 - static_cast<double>(p[i])) * g0[i];
  }
  const double num = inter + eps;
  const double den = inter + 0.5 * beta * (fp + fn) + eps;
  const double m = den > 0 ? num / den : 1.0;
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(1.0 - m)), {p0}, [p0, g0, beta, num, den](Node<T>& n) {
    if (den <= 0) return;
    Tensor<T> g(p0.shape());
    const double up = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g0[i];
      const double dden = gi + 0.5 * beta * (1.0 - 2.0 * gi);
      const double dm = (gi * den - num * dden) / (den * den);
      g[i] = static_cast<T>(-dm * up);
    }
    accumulate_grad(p0.node(), g);
  });
}

#define IBV_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> scale(const Var<T>&, T);                                                            \
  template Var<T> sum(const Var<T>&);                                                                 \
  template Var<T> mean(const Var<T>&);                                                                \
  template Var<T> reshape(const Var<T>&, Shape);                                                      \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                \
  template Var<T> gelu(const Var<T>&);                                                                \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                          \
  template Var<T> softmax_lastdim(const Var<T>&);                                                     \
  template Var<T> to_channels_last(const Var<T>&);                                                    \
  template Var<T> to_channels_first(const Var<T>&);                                                   \
  template Var<T> gather_rows(const Var<T>&, std::int64_t, IndexList, Shape);                         \
  template Var<T> add_broadcast(const Var<T>&, const Var<T>&);                                        \
  template Var<T> concat_lastdim(const Var<T>&, const Var<T>&);                                       \
  template Var<T> slice_lastdim(const Var<T>&, std::int64_t, std::int64_t);                           \
  template Var<T> trilinear_upsample2(const Var<T>&);                                                 \
  template Var<T> multi_head_attention(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,    \
                                       const Tensor<T>&, int, Tensor<T>*);                            \
  template Var<T> weighted_dice_loss(const Var<T>&, const Tensor<T>&, T, T);

IBV_INSTANTIATE_OPS(float)
IBV_INSTANTIATE_OPS(double)

}  // namespace ibv
