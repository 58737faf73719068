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
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ibimhav/tensor.hpp"
#include "ibimhav/volume.hpp"

namespace ibv {

// M(β) = Σp·g / (Σp·g + 0.5β(Σp·(1−g) + Σ(1−p)·g)), evaluated in double.
// Returns 1 when both prediction and truth are empty.
double weighted_dice_similarity(const Tensor<float>& p0, const Tensor<float>& g0, double beta);
double weighted_dice_similarity(const Tensor<double>& p0, const Tensor<double>& g0, double beta);

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
};

// Voxels are foreground when nonzero.
ConfusionCounts confusion(const Volume& pred, const Volume& truth);

struct Metrics {
  // Empty when the denominator is zero.
  std::optional<double> precision, sensitivity, dice;
};

Metrics metrics(const ConfusionCounts& c);

// {case_id, precision, sensitivity, dice} with null for undefined values.
nlohmann::json metrics_row(const std::string& case_id, const Metrics& m);

}  // namespace ibv
