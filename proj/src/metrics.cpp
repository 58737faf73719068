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

#include "ibimhav/metrics.hpp"

#include "ibimhav/errors.hpp"

namespace ibv {

namespace {

template <typename T>
double similarity(const Tensor<T>& p0, const Tensor<T>& g0, double beta) {
  if (p0.shape() != g0.shape()) {
    throw DimensionError("similarity: prediction " + shape_str(p0.shape()) + " vs truth " + shape_str(g0.shape()));
  }
  if (beta < 0) throw ConfigError("beta must be non-negative");
  double inter = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    const double p = p0[i], g = g0[i];
    inter += p * g;
    fp += p * (1.0 - g);
    fn += (1.0 - p) * g;
  }
  const double den = inter + 0.5 * beta * (fp + fn);
  if (den == 0.0) return 1.0;
  return inter / den;
}

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double weighted_dice_similarity(const Tensor<float>& p0, const Tensor<float>& g0, double beta) {
  return similarity(p0, g0, beta);
}

double weighted_dice_similarity(const Tensor<double>& p0, const Tensor<double>& g0, double beta) {
  return similarity(p0, g0, beta);
}

ConfusionCounts confusion(const Volume& pred, const Volume& truth) {
  if (pred.extents() != truth.extents()) {
    throw DimensionError("confusion: extents " + grid_str(pred.extents()) + " vs " + grid_str(truth.extents()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0.0f, g = truth.data[i] != 0.0f;
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

Metrics metrics(const ConfusionCounts& c) {
  Metrics m;
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

nlohmann::json metrics_row(const std::string& case_id, const Metrics& m) {
  auto field = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"case_id", case_id},
          {"precision", field(m.precision)},
          {"sensitivity", field(m.sensitivity)},
          {"dice", field(m.dice)}};
}

}  // namespace ibv
