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

#include <cmath>
#include <functional>
#include <string>

#include "ibimhav/autograd.hpp"

namespace ibv {

struct GradCheckReport {
  double max_rel_error = 0;  // max |analytic − numeric| over max(‖analytic‖∞, ‖numeric‖∞)
  double max_abs_error = 0;
  std::size_t worst_index = 0;
  double grad_scale = 0;
};

// Compares the reverse-mode gradient of a scalar function with central
// differences, perturbing `x` in place. `f` must rebuild the graph from the
// current value of `x` on every call.
//
// The error of each element is measured against the gradient's infinity norm
// so that entries that are zero up to rounding do not dominate the result.
inline GradCheckReport grad_check(const std::function<Var<double>()>& f, Var<double>& x, double step = 1e-4) {
  x.zero_grad();
  Var<double> y = f();
  if (y.value().size() != 1) throw DimensionError("grad_check: function is not scalar-valued");
  y.backward();
  const Tensor<double> analytic = x.grad();

  Tensor<double> numeric(x.shape());
  auto& xv = x.mutable_value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double orig = xv[i];
    xv[i] = orig + step;
    const double fp = f().value()[0];
    xv[i] = orig - step;
    const double fm = f().value()[0];
    xv[i] = orig;
    numeric[i] = (fp - fm) / (2 * step);
  }

  GradCheckReport rep;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i])) {
      throw NumericalError("grad_check: non-finite gradient at element " + std::to_string(i) +
                           " (analytic " + std::to_string(analytic[i]) + ", numeric " +
                           std::to_string(numeric[i]) + ")");
    }
    rep.grad_scale = std::max({rep.grad_scale, std::abs(analytic[i]), std::abs(numeric[i])});
    const double d = std::abs(analytic[i] - numeric[i]);
    if (d > rep.max_abs_error) {
      rep.max_abs_error = d;
      rep.worst_index = i;
    }
  }
  rep.max_rel_error = rep.grad_scale > 0 ? rep.max_abs_error / rep.grad_scale : rep.max_abs_error;
  x.zero_grad();
  return rep;
}

}  // namespace ibv
