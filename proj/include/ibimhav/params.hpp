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
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibimhav/autograd.hpp"

namespace ibv {

// Seeded generator shared by initialization, phantoms and sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  // Derived stream; the same (seed, stream) pair always yields the same sequence.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  double uniform(double lo = 0.0, double hi = 1.0);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal(double mean = 0.0, double stddev = 1.0);
  // Normal resampled until it falls within ±2σ.
  double truncated_normal(double stddev);

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

enum class Init { kTruncNormal, kZeros, kOnes };

// Standard deviation 1/√fan_in, used for convolutions and the projections
// outside the transformer blocks.
double fan_in_std(std::int64_t fan_in);

template <typename T>
struct Param {
  std::string name;
  Var<T> var;
  bool trainable = true;
  bool decay = true;  // subject to weight decay
};

template <typename T>
class ParamStore {
 public:
  static constexpr double kInitStd = 0.02;

  // Names must be unique; a duplicate raises ConfigError. `stddev` applies to
  // kTruncNormal only.
  Var<T>& create(const std::string& name, Shape shape, Init init, Rng& rng, double stddev = kInitStd);
  Var<T>& get(const std::string& name);
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::size_t element_count() const;
  void zero_grad();

 private:
  std::vector<Param<T>> params_;
};

struct NamedTensor {
  std::string name;
  Tensor<float> f32;
  Tensor<double> f64;
  bool is_f64 = false;
};

// Manifest (JSON) of {name, shape, dtype, offset, bytes} plus a
// little-endian raw blob next to it.
void save_tensors(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors,
                  const nlohmann::json& meta);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace ibv
