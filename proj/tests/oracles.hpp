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

// Independent reference implementations shared by the unit and acceptance tests.

#include <gmpxx.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ibimhav/attention.hpp"

namespace ibv::test {

// Independent reference for one shifted IB-MSA layer: each query attends to
// exactly the tokens of its region of the shifted partition, in original
// coordinates, with the bias looked up from the raw displacement and the
// absolute embedding taken at the token's slot inside its rolled window.
template <typename T>
Tensor<T> naive_shifted_ib_msa(const Tensor<T>& x, const AttentionParams<T>& p, const AttentionConfig& cfg) {
  const std::int64_t h = x.dim(0), w = x.dim(1), d = x.dim(2), c = cfg.dim, heads = cfg.heads;
  const std::int64_t dh = c / heads, s = cfg.window.window[0], sh = s / 2, span = 2 * s - 1;
  const std::int64_t n = h * w * d;
  auto seg = [&](std::int64_t v) { return v < sh ? 0 : 1 + (v - sh) / s; };
  auto coords = [&](std::int64_t t) { return std::array<std::int64_t, 3>{t / (w * d), (t / d) % w, t % d}; };
  auto slot = [&](std::int64_t t) {
    auto q = coords(t);
    const std::int64_t e[3] = {h, w, d};
    std::int64_t r = 0;
    for (int a = 0; a < 3; ++a) r = r * s + ((q[a] - sh + e[a]) % e[a]) % s;
    return r;
  };
  auto region = [&](std::int64_t t) {
    auto q = coords(t);
    return (seg(q[0]) * 100 + seg(q[1])) * 100 + seg(q[2]);
  };
  std::vector<double> qkv(static_cast<std::size_t>(n * 3 * c));
  for (std::int64_t t = 0; t < n; ++t) {
    const std::int64_t sl = slot(t);
    for (std::int64_t o = 0; o < 3 * c; ++o) {
      double acc = static_cast<double>(p.qkv_b.value()[o]);
      for (std::int64_t i = 0; i < c; ++i) {
        double xi = static_cast<double>(x[t * c + i]);
        if (p.abs_embed.defined()) xi += static_cast<double>(p.abs_embed.value()[sl * c + i]);
        acc += xi * static_cast<double>(p.qkv_w.value()[i * 3 * c + o]);
      }
      qkv[t * 3 * c + o] = acc;
    }
  }
  std::vector<double> att(static_cast<std::size_t>(n * c), 0.0);
  for (std::int64_t t = 0; t < n; ++t) {
    std::vector<std::int64_t> keys;
    for (std::int64_t u = 0; u < n; ++u)
      if (region(u) == region(t)) keys.push_back(u);
    const auto pt = coords(t);
    for (std::int64_t hd = 0; hd < heads; ++hd) {
      std::vector<double> logit(keys.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < keys.size(); ++j) {
        double dot = 0;
        for (std::int64_t e = 0; e < dh; ++e)
          dot += qkv[t * 3 * c + hd * dh + e] * qkv[keys[j] * 3 * c + c + hd * dh + e];
        dot /= std::sqrt(static_cast<double>(dh));
        if (p.rel_table.defined()) {
          const auto pu = coords(keys[j]);
          const std::int64_t idx =
              ((pu[0] - pt[0] + s - 1) * span + (pu[1] - pt[1] + s - 1)) * span + (pu[2] - pt[2] + s - 1);
          dot += static_cast<double>(p.rel_table.value()[hd * span * span * span + idx]);
        }
        logit[j] = dot;
        mx = std::max(mx, dot);
      }
      double z = 0;
      for (auto& l : logit) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < keys.size(); ++j)
        for (std::int64_t e = 0; e < dh; ++e)
          att[t * c + hd * dh + e] += logit[j] / z * qkv[keys[j] * 3 * c + 2 * c + hd * dh + e];
    }
  }
  Tensor<T> out(x.shape());
  for (std::int64_t t = 0; t < n; ++t)
    for (std::int64_t o = 0; o < c; ++o) {
      double acc = static_cast<double>(p.proj_b.value()[o]);
      for (std::int64_t i = 0; i < c; ++i) acc += att[t * c + i] * static_cast<double>(p.proj_w.value()[i * c + o]);
      out[t * c + o] = static_cast<T>(acc);
    }
  return out;
}

// Global and windowed attention cost in exact integers.
inline mpz_class big_msa(long h, long w, long d, long c) {
  mpz_class n = mpz_class(h) * w * d;
  return 4 * n * c * c + 2 * n * n * c;
}

inline mpz_class big_ibmsa(long h, long w, long d, long c, long sh, long sw, long sd) {
  mpz_class n = mpz_class(h) * w * d;
  return 4 * n * c * c + 2 * mpz_class(sh) * sw * sd * n * c;
}

}  // namespace ibv::test
