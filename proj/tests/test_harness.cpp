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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include <unistd.h>

#include "ibimhav/harness.hpp"
#include "test_util.hpp"

namespace ibv {
namespace {

namespace fs = std::filesystem;

ModelConfig tiny_model() {
  ModelConfig m;
  m.patch = {16, 16, 16};
  m.embed_dim = 8;
  m.heads = {2, 2};
  m.blocks = 6;
  m.levels = 1;
  m.local_channels = 4;
  m.local_kernel = 3;
  return m;
}

PreparedCase small_case(std::uint64_t seed = 3, Grid3 extents = {20, 20, 20}) {
  PhantomSpec ps;
  ps.extents = extents;
  ps.tubes = 2;
  ps.seed = seed;
  PreprocessConfig pc;
  pc.target = extents;
  return preprocess_case(generate_phantom(ps, "small"), pc);
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.lr = 0.01;
  tc.batch = 2;
  tc.epochs = 2;
  tc.steps_per_epoch = 3;
  tc.crop = {16, 16, 16};
  tc.seed = 5;
  return tc;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ibv_harness_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double count(const Volume& v) {
  double n = 0;
  for (auto x : v.data.data()) n += x != 0.0f;
  return n;
}

TEST(Phantom, ZeroTubesGivesEmptyVesselMask) {
  PhantomSpec s;
  s.tubes = 0;
  CaseRecord c = generate_phantom(s);
  EXPECT_EQ(count(c.vessel), 0.0);
  EXPECT_GT(count(c.liver), 0.0);
}

TEST(Phantom, StraightTubeMatchesCylinderVolume) {
  PhantomSpec s;
  s.extents = {48, 24, 24};
  s.layout = PhantomLayout::kStraight;
  s.tubes = 1;
  s.radius_min = s.radius_max = 2.0;
  const double r = 2.0, length = 47.0;
  const double expected = std::numbers::pi * r * r * length;
  const double got = count(generate_phantom(s).vessel);
  EXPECT_NEAR(got, expected, 0.2 * expected);
}

TEST(Phantom, SameSeedIsBitwiseIdentical) {
  PhantomSpec s;
  CaseRecord a = generate_phantom(s), b = generate_phantom(s);
  EXPECT_EQ(a.image.data.storage(), b.image.data.storage());
  EXPECT_EQ(a.vessel.data.storage(), b.vessel.data.storage());
  EXPECT_EQ(a.liver.data.storage(), b.liver.data.storage());
  s.seed = 8;
  EXPECT_NE(generate_phantom(s).vessel.data.storage(), a.vessel.data.storage());
}

TEST(Phantom, IntensitiesFollowTheSpec) {
  PhantomSpec s;
  s.noise_sigma = 0;
  CaseRecord c = generate_phantom(s);
  for (std::int64_t i = 0; i < c.image.voxels(); ++i) {
    const float want = c.vessel.data[i] != 0.0f  ? 180.0f
                       : c.liver.data[i] != 0.0f ? 60.0f
                                                 : -100.0f;
    ASSERT_EQ(c.image.data[i], want);
  }
}

TEST(Phantom, VesselsStayInsideTheVolumeAndAreTubular) {
  CaseRecord c = generate_phantom(PhantomSpec{});
  const double v = count(c.vessel);
  EXPECT_GT(v, 200.0);
  EXPECT_LT(v, 0.25 * static_cast<double>(c.vessel.voxels()));
}

TEST(Phantom, InvalidSpecIsRejected) {
  PhantomSpec s;
  s.radius_min = 0.5;
  EXPECT_THROW(generate_phantom(s), ConfigError);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  Network<float> net(tiny_model(), 1);
  std::vector<Tensor<float>> before;
  for (const auto& p : net.params().params()) before.push_back(p.var.value());
  TrainConfig tc = tiny_train();
  tc.lr = 0;
  tc.weight_decay = 0;
  Trainer t(net, {small_case()}, tc);
  t.run(tc.steps_per_epoch);
  const auto& list = net.params().params();
  for (std::size_t i = 0; i < list.size(); ++i) EXPECT_EQ(list[i].var.value().storage(), before[i].storage()) << list[i].name;
}

TEST(Trainer, FirstStepFollowsTheSgdRule) {
  Network<float> net(tiny_model(), 1);
  std::vector<Tensor<float>> before;
  for (const auto& p : net.params().params()) before.push_back(p.var.value());
  TrainConfig tc = tiny_train();
  tc.lr = 0.5;
  tc.momentum = 0;
  tc.weight_decay = 0.1;
  tc.epochs = 1;
  tc.steps_per_epoch = 1;
  Trainer t(net, {small_case()}, tc);
  // Without momentum history: w ← w0 − lr·g − lr·wd·w0, decay only where flagged.
  t.run(1);
  const auto& list = net.params().params();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& p = list[i];
    const auto& g = p.var.grad();
    for (std::size_t k = 0; k < before[i].size(); ++k) {
      const float w0 = before[i][k];
      const float want = w0 - 0.5f * g[k] - (p.decay ? 0.5f * 0.1f * w0 : 0.0f);
      ASSERT_NEAR(p.var.value()[k], want, 1e-6f * (1 + std::abs(w0))) << p.name;
    }
  }
}

TEST(Trainer, ResumedRunMatchesUninterruptedRunBitwise) {
  const PreparedCase c = small_case();
  TrainConfig tc = tiny_train();
  Network<float> full(tiny_model(), 2);
  Trainer a(full, {c}, tc);
  a.run_all();

  const fs::path dir = scratch("resume");
  Network<float> first(tiny_model(), 2);
  Trainer b(first, {c}, tc);
  b.run(tc.steps_per_epoch + 1);
  b.save_checkpoint(dir);

  Network<float> second(tiny_model(), 99);
  Trainer r(second, {c}, tc);
  r.load_checkpoint(dir);
  EXPECT_EQ(r.state().step, tc.steps_per_epoch + 1);
  r.run_all();

  const auto& pa = full.params().params();
  const auto& pr = second.params().params();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].var.value().storage(), pr[i].var.value().storage()) << pa[i].name;
    EXPECT_EQ(a.state().momentum[i].storage(), r.state().momentum[i].storage()) << pa[i].name;
  }
  ASSERT_EQ(a.state().history.size(), r.state().history.size());
  for (std::size_t i = 0; i < a.state().history.size(); ++i) EXPECT_EQ(a.state().history[i].loss, r.state().history[i].loss);
  fs::remove_all(dir);
}

TEST(Trainer, SameSeedSameLossesDifferentSeedDiffers) {
  const PreparedCase c = small_case();
  TrainConfig tc = tiny_train();
  Network<float> n1(tiny_model(), 4), n2(tiny_model(), 4), n3(tiny_model(), 4);
  Trainer t1(n1, {c}, tc), t2(n2, {c}, tc);
  auto r1 = t1.run_all(), r2 = t2.run_all();
  for (std::size_t i = 0; i < r1.steps.size(); ++i) EXPECT_EQ(r1.steps[i].loss, r2.steps[i].loss);
  tc.seed = 6;
  Trainer t3(n3, {c}, tc);
  auto r3 = t3.run_all();
  bool differs = false;
  for (std::size_t i = 0; i < r1.steps.size(); ++i) differs |= r1.steps[i].loss != r3.steps[i].loss;
  EXPECT_TRUE(differs);
}

TEST(Trainer, EpochLossIsTheMeanOfItsSteps) {
  Network<float> net(tiny_model(), 1);
  TrainConfig tc = tiny_train();
  Trainer t(net, {small_case()}, tc);
  const TrainResult r = t.run_all();
  ASSERT_EQ(r.steps.size(), 6u);
  ASSERT_EQ(r.epoch_loss.size(), 2u);
  for (int e = 0; e < 2; ++e) {
    double s = 0;
    for (int k = 0; k < 3; ++k) s += r.steps[static_cast<std::size_t>(e * 3 + k)].loss;
    EXPECT_DOUBLE_EQ(r.epoch_loss[static_cast<std::size_t>(e)], s / 3);
  }
  for (const auto& s : r.steps) {
    EXPECT_GT(s.loss, 0.0);
    EXPECT_LE(s.loss, 1.0);
  }
}

TEST(Trainer, DefaultEpochIsOnePassOverTheCases) {
  Network<float> net(tiny_model(), 1);
  TrainConfig tc = tiny_train();
  tc.steps_per_epoch = 0;
  tc.batch = 2;
  Trainer t(net, {small_case(1), small_case(2), small_case(3)}, tc);
  EXPECT_EQ(t.steps_per_epoch(), 2);
  EXPECT_EQ(t.total_steps(), 4);
}

TEST(Trainer, NonFiniteLossAbortsWithDiagnostics) {
  Network<float> net(tiny_model(), 1);
  PreparedCase c = small_case();
  c.image.data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc = tiny_train();
  tc.augment = false;
  tc.crop = {16, 16, 16};
  c.image = crop(c.image, Box{{0, 0, 0}, {15, 15, 15}});
  c.label = crop(c.label, Box{{0, 0, 0}, {15, 15, 15}});
  Trainer t(net, {c}, tc);
  try {
    t.run(1);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("step 0"), std::string::npos) << m;
    EXPECT_NE(m.find("lr"), std::string::npos) << m;
    EXPECT_NE(m.find("grad norm"), std::string::npos) << m;
  }
}

TEST(Trainer, ConfigurationErrors) {
  Network<float> net(tiny_model(), 1);
  TrainConfig tc = tiny_train();
  EXPECT_THROW(Trainer(net, {}, tc), ConfigError);
  tc.crop = {8, 8, 8};
  EXPECT_THROW(Trainer(net, {small_case()}, tc), ConfigError);
  tc = tiny_train();
  tc.batch = 0;
  EXPECT_THROW(Trainer(net, {small_case()}, tc), ConfigError);
  tc = tiny_train();
  EXPECT_THROW(Trainer(net, {small_case(3, {12, 20, 20})}, tc), DimensionError);
}

TEST(Trainer, ClippingBoundsTheFirstStep) {
  const PreparedCase c = small_case();
  TrainConfig tc = tiny_train();
  tc.momentum = 0;
  tc.weight_decay = 0;
  tc.clip_norm = 1e-3;
  tc.lr = 1.0;
  Network<float> net(tiny_model(), 1);
  std::vector<Tensor<float>> before;
  for (const auto& p : net.params().params()) before.push_back(p.var.value());
  Trainer t(net, {c}, tc);
  t.run(1);
  ASSERT_GT(t.state().last_grad_norm, 1e-3);
  double moved2 = 0;
  const auto& list = net.params().params();
  for (std::size_t i = 0; i < list.size(); ++i)
    for (std::size_t k = 0; k < before[i].size(); ++k) {
      const double d = static_cast<double>(list[i].var.value()[k]) - before[i][k];
      moved2 += d * d;
    }
  EXPECT_NEAR(std::sqrt(moved2), 1e-3, 1e-5);
}

TEST(Trainer, LossCurveCsv) {
  const fs::path dir = scratch("csv");
  write_loss_csv(dir / "loss.csv", {{0, 0.5}, {1, 0.25}});
  std::ifstream f(dir / "loss.csv");
  std::string all((std::istreambuf_iterator<char>(f)), {});
  EXPECT_EQ(all, "step,loss\n0,0.5\n1,0.25\n");
  fs::remove_all(dir);
}

TEST(Trainer, CheckpointParamsLoadIntoAFreshNetwork) {
  const fs::path dir = scratch("ckpt");
  Network<float> net(tiny_model(), 1);
  Trainer t(net, {small_case()}, tiny_train());
  t.run(2);
  t.save_checkpoint(dir, {{"note", "x"}});
  Network<float> other(tiny_model(), 50);
  nlohmann::json meta = load_model_params(other, dir);
  EXPECT_EQ(meta["step"], 2);
  EXPECT_EQ(meta["extra"]["note"], "x");
  for (std::size_t i = 0; i < net.params().params().size(); ++i)
    EXPECT_EQ(net.params().params()[i].var.value().storage(), other.params().params()[i].var.value().storage());
  ModelConfig wider = tiny_model();
  wider.embed_dim = 16;
  Network<float> mismatch(wider, 1);
  EXPECT_THROW(load_model_params(mismatch, dir), FormatError);
  fs::remove_all(dir);
}

Tensor<float> softmax_vessel(double a, double b) {
  Tensor<float> t({1});
  const double m = std::max(a, b);
  t[0] = static_cast<float>(std::exp(b - m) / (std::exp(a - m) + std::exp(b - m)));
  return t;
}

TEST(Infer, SinglePatchEqualsDirectForward) {
  Network<float> net(tiny_model(), 3);
  Rng rng(1);
  Volume img({16, 16, 16}, {1, 1, 1});
  img.data = test::random_tensor<float>({16, 16, 16}, rng);
  Volume p = infer_sliding(net, img, 16);
  NoGradGuard ng;
  auto direct = net.foreground(img.data).value();
  for (std::size_t i = 0; i < direct.size(); ++i) ASSERT_NEAR(p.data[i], direct[i], 1e-6f);
}

// With every weight tensor zeroed the network's output cannot depend on
// position, so any patch layout must give one value everywhere.
TEST(Infer, ConstantOutputIsLayoutIndependent) {
  Network<float> net(tiny_model(), 3);
  Rng rng(2);
  for (auto& p : net.params().params()) {
    auto& v = p.var.mutable_value();
    if (v.rank() >= 2) {
      v.fill(0.0f);
    } else {
      for (auto& e : v.data()) e = static_cast<float>(rng.uniform(-1, 1));
    }
  }
  Volume img({40, 24, 20}, {1, 1, 1}, VolumeKind::kScalar, 0.7f);
  Volume a = infer_sliding(net, img, 8), b = infer_sliding(net, img, 16);
  const float ref = a.data[0];
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    ASSERT_NEAR(a.data[i], ref, 1e-6f);
    ASSERT_NEAR(b.data[i], ref, 1e-6f);
  }
}

TEST(Infer, OverlapAveragesLogitsOfBothPatches) {
  Network<float> net(tiny_model(), 5);
  Rng rng(3);
  Volume img({24, 16, 16}, {1, 1, 1});
  img.data = test::random_tensor<float>({24, 16, 16}, rng);
  ASSERT_EQ(sliding_window_grid(img.extents(), {16, 16, 16}, 8).size(), 2u);
  Volume p = infer_sliding(net, img, 8);
  NoGradGuard ng;
  const auto la = net.logits(crop(img, Box{{0, 0, 0}, {15, 15, 15}}).data).value();
  const auto lb = net.logits(crop(img, Box{{8, 0, 0}, {23, 15, 15}}).data).value();
  for (std::int64_t x = 0; x < 24; ++x)
    for (std::int64_t y = 0; y < 16; ++y)
      for (std::int64_t z = 0; z < 16; ++z) {
        double a = 0, b = 0;
        int n = 0;
        if (x < 16) {
          const std::int64_t k = (x * 16 + y) * 16 + z;
          a += la[2 * k];
          b += la[2 * k + 1];
          ++n;
        }
        if (x >= 8) {
          const std::int64_t k = ((x - 8) * 16 + y) * 16 + z;
          a += lb[2 * k];
          b += lb[2 * k + 1];
          ++n;
        }
        ASSERT_NEAR(p.at(x, y, z), softmax_vessel(a / n, b / n)[0], 1e-6f) << x << "," << y << "," << z;
      }
}

TEST(Infer, StrideEqualToPatchConcatenatesIndependentForwards) {
  Network<float> net(tiny_model(), 6);
  Rng rng(4);
  Volume img({32, 16, 16}, {1, 1, 1});
  img.data = test::random_tensor<float>({32, 16, 16}, rng);
  Volume p = infer_sliding(net, img, 16);
  NoGradGuard ng;
  for (std::int64_t ox : {0, 16}) {
    auto f = net.foreground(crop(img, Box{{ox, 0, 0}, {ox + 15, 15, 15}}).data).value();
    for (std::int64_t x = 0; x < 16; ++x)
      for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t z = 0; z < 16; ++z) ASSERT_NEAR(p.at(ox + x, y, z), f[(x * 16 + y) * 16 + z], 1e-6f);
  }
}

TEST(Infer, ThreadCountDoesNotChangeTheResult) {
  Network<float> net(tiny_model(), 7);
  Rng rng(5);
  Volume img({28, 20, 16}, {1, 1, 1});
  img.data = test::random_tensor<float>({28, 20, 16}, rng);
  Volume a = infer_sliding(net, img, 4, 1), b = infer_sliding(net, img, 4, 3);
  EXPECT_EQ(a.data.storage(), b.data.storage());
}

TEST(Infer, VolumeSmallerThanPatchIsRejected) {
  Network<float> net(tiny_model(), 7);
  Volume img({12, 16, 16}, {1, 1, 1});
  EXPECT_THROW(infer_sliding(net, img), DimensionError);
}

Volume cube_mask(Grid3 e, Grid3 lo, std::int64_t side) {
  Volume m(e, {1, 1, 1}, VolumeKind::kMask);
  for (std::int64_t x = lo[0]; x < lo[0] + side; ++x)
    for (std::int64_t y = lo[1]; y < lo[1] + side; ++y)
      for (std::int64_t z = lo[2]; z < lo[2] + side; ++z) m.at(x, y, z) = 1;
  return m;
}

TEST(Evaluate, PerfectBinaryPredictionScoresOne) {
  Volume truth = cube_mask({16, 16, 16}, {2, 2, 2}, 7);
  Volume prob = truth;
  prob.kind = VolumeKind::kScalar;
  auto row = evaluate_case("c", prob, truth, EvalConfig{});
  EXPECT_EQ(row["dice"], 1.0);
  EXPECT_EQ(row["precision"], 1.0);
  EXPECT_EQ(row["sensitivity"], 1.0);
  EXPECT_EQ(row["case_id"], "c");
}

TEST(Evaluate, ThresholdTieIsForeground) {
  Volume truth = cube_mask({16, 16, 16}, {2, 2, 2}, 7);
  Volume prob(truth.extents(), truth.spacing);
  for (std::size_t i = 0; i < prob.data.size(); ++i) prob.data[i] = truth.data[i] != 0 ? 0.5f : 0.4999f;
  EXPECT_EQ(threshold_volume(prob, 0.5).data.storage(), truth.data.storage());
  EXPECT_EQ(evaluate_case("c", prob, truth, EvalConfig{})["dice"], 1.0);
}

TEST(Evaluate, RemovingFalsePositiveBlobNeverLowersPrecision) {
  Volume truth = cube_mask({24, 24, 24}, {1, 1, 1}, 8);  // 512 voxels, kept
  Volume prob = truth;
  prob.kind = VolumeKind::kScalar;
  for (std::int64_t x = 18; x < 21; ++x)
    for (std::int64_t y = 18; y < 21; ++y)
      for (std::int64_t z = 18; z < 21; ++z) prob.at(x, y, z) = 0.9f;  // 27-voxel false positive
  EvalConfig raw;
  raw.min_component_mm3 = 0;
  const double before = evaluate_case("c", prob, truth, raw)["precision"];
  const double after = evaluate_case("c", prob, truth, EvalConfig{})["precision"];
  EXPECT_NEAR(before, 512.0 / 539.0, 1e-12);
  EXPECT_GE(after, before);
  EXPECT_EQ(after, 1.0);
}

TEST(Evaluate, ClosingIsOptional) {
  Volume truth = cube_mask({16, 16, 16}, {3, 3, 3}, 8);
  Volume prob = truth;
  prob.kind = VolumeKind::kScalar;
  prob.at(6, 6, 6) = 0;  // interior hole
  EvalConfig cfg;
  cfg.min_component_mm3 = 0;
  const double open = evaluate_case("c", prob, truth, cfg)["sensitivity"];
  cfg.close_radius = 1;
  const double closed = evaluate_case("c", prob, truth, cfg)["sensitivity"];
  EXPECT_LT(open, 1.0);
  EXPECT_EQ(closed, 1.0);
}

TEST(Evaluate, MismatchedExtentsNameBoth) {
  Volume a({8, 8, 8}, {1, 1, 1}), b({8, 8, 9}, {1, 1, 1}, VolumeKind::kMask);
  try {
    evaluate_case("c", a, b, EvalConfig{});
    FAIL();
  } catch (const DimensionError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("(8,8,8)"), std::string::npos) << m;
    EXPECT_NE(m.find("(8,8,9)"), std::string::npos) << m;
  }
}

TEST(Evaluate, InvalidConfigIsRejected) {
  Volume a({8, 8, 8}, {1, 1, 1});
  EvalConfig cfg;
  cfg.connectivity = 18;
  EXPECT_THROW(evaluate_case("c", a, a, cfg), ConfigError);
}

// preprocess → train → infer → evaluate twice with the same seeds.
TEST(Pipeline, RepeatsBitwise) {
  auto run = [] {
    PhantomSpec ps;
    ps.extents = {24, 24, 24};
    PreprocessConfig pc;
    pc.target = {20, 20, 20};
    PreparedCase c = preprocess_case(generate_phantom(ps), pc);
    Network<float> net(tiny_model(), 11);
    Trainer t(net, {c}, tiny_train());
    t.run_all();
    Volume prob = infer_sliding(net, c.image, 4);
    EvalConfig ec;
    ec.min_component_mm3 = 0;
    return std::make_pair(prob.data.storage(), evaluate_case("c", prob, c.truth, ec).dump());
  };
  auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

}  // namespace
}  // namespace ibv
