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

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ibimhav/harness.hpp"

namespace ibv {

struct InferConfig {
  std::int64_t stride = 24;
};

// Everything a pipeline run depends on. `seed` initializes the model;
// train.seed drives crops and augmentation, phantom.seed the phantom.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PhantomSpec phantom;
  PreprocessConfig preprocess;
  InferConfig infer;
  EvalConfig eval;
  int threads = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);

// Overlays `doc` on the defaults. Unknown keys and type mismatches raise
// ConfigError naming the dotted key.
RunConfig run_config_from_json(const nlohmann::json& doc);

// Reads a JSON file; syntax errors raise FormatError.
nlohmann::json read_json_file(const std::filesystem::path& path);

// Applies "a.b.c=value" to `doc`. The value is parsed as JSON when possible,
// as a comma-separated number list when it contains commas, and as a string
// otherwise. The key must exist in the default configuration.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace ibv
