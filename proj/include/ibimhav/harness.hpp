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
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ibimhav/metrics.hpp"
#include "ibimhav/network.hpp"
#include "ibimhav/volume.hpp"

namespace ibv {

enum class PhantomLayout { kBranching, kStraight };

struct PhantomSpec {
  Grid3 extents{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  int tubes = 3;
  double radius_min = 1.5;
  double radius_max = 3.0;
  double background_hu = -100.0;  // outside the liver
  double liver_hu = 60.0;
  double contrast_hu = 120.0;  // added inside vessels
  double noise_sigma = 10.0;
  PhantomLayout layout = PhantomLayout::kBranching;
  std::uint64_t seed = 7;

  void validate() const;
};

// Marks voxels within the swept radius of segment a→b (radius interpolated
// linearly from ra to rb along the segment).
void render_tube(Volume& mask, const std::array<double, 3>& a, const std::array<double, 3>& b, double ra, double rb);

CaseRecord generate_phantom(const PhantomSpec& spec, const std::string& case_id = "phantom");

struct TrainConfig {
  double lr = 3e-5;
  double momentum = 0.9;
  double weight_decay = 2e-3;
  int batch = 2;
  int epochs = 750;
  // Optimizer steps per epoch; 0 means one pass over the cases (ceil(cases / batch)).
  int steps_per_epoch = 0;
  double beta = 6.0;
  double eps = 1e-6;
  // Rescale the global gradient to this L2 norm when it is larger; 0 disables.
  double clip_norm = 0.0;
  Grid3 crop{128, 128, 96};
  bool augment = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
};

struct TrainState {
  std::int64_t step = 0;  // completed optimizer steps
  std::vector<Tensor<float>> momentum;
  double last_grad_norm = 0.0;  // before clipping
  std::vector<StepRecord> history;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_loss;  // mean step loss per completed epoch
};

// SGD with momentum and decoupled weight decay:
//   v ← μ·v + g;  w ← w − lr·v − lr·wd·w  (decay only on decay-flagged weights).
// Step s draws its crops and augmentation from Rng::derive(seed, s), so a run
// resumed from a checkpoint continues bitwise identically.
class Trainer {
 public:
  Trainer(Network<float>& net, std::vector<PreparedCase> cases, TrainConfig cfg);

  std::int64_t total_steps() const;
  std::int64_t steps_per_epoch() const;
  const TrainState& state() const { return state_; }

  // Runs until `until_step` (clamped to total_steps()); returns the losses of
  // the steps run in this call.
  std::vector<StepRecord> run(std::int64_t until_step);
  TrainResult run_all();

  void save_checkpoint(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  // Restores parameters, momentum buffers and the step counter.
  void load_checkpoint(const std::filesystem::path& dir);

  // Mean loss per epoch over the recorded history.
  std::vector<double> epoch_losses() const;

 private:
  double step_once();

  Network<float>& net_;
  std::vector<PreparedCase> cases_;
  TrainConfig cfg_;
  TrainState state_;
};

// Copies the parameters of a checkpoint written by Trainer into `net` and
// returns the checkpoint metadata.
nlohmann::json load_model_params(Network<float>& net, const std::filesystem::path& dir);

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps);

// Averages logits of overlapping patches and converts to the vessel
// probability. `threads` > 1 runs patches concurrently; the result does not
// depend on the thread count.
Volume infer_sliding(const Network<float>& net, const Volume& image, std::int64_t stride = 24, int threads = 1);

struct EvalConfig {
  double threshold = 0.5;  // p ≥ threshold is vessel
  double min_component_mm3 = 180.0;  // 0 disables the component filter
  int connectivity = 26;
  int close_radius = 0;  // 0 disables closing

  void validate() const;
};

Volume threshold_volume(const Volume& prob, double threshold);
nlohmann::json evaluate_case(const std::string& case_id, const Volume& prob, const Volume& truth, const EvalConfig& cfg);

}  // namespace ibv
