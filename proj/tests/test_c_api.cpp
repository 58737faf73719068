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

// Exercises the shared library through its C interface only.

#include <gtest/gtest.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ibimhav/ibimhav.h"

namespace {

namespace fs = std::filesystem;

const char* const kTiny[] = {
    "model.patch=16,16,16", "model.embed_dim=8",    "model.heads=2,2",          "model.blocks=6",
    "model.levels=1",       "model.local_channels=4", "train.crop=16,16,16",    "train.epochs=1",
    "train.steps_per_epoch=2", "train.batch=1",     "phantom.extents=20,20,20", "preprocess.target=20,20,20",
    "infer.stride=4",       "eval.min_component_mm3=0",
};

struct Config {
  ibv_config* c = nullptr;
  Config() {
    EXPECT_EQ(ibv_config_from_json(nullptr, &c), IBV_OK);
    for (const char* s : kTiny) EXPECT_EQ(ibv_config_set(c, s), IBV_OK) << s << ": " << ibv_last_error();
    EXPECT_EQ(ibv_config_validate(c), IBV_OK) << ibv_last_error();
  }
  ~Config() { ibv_config_free(c); }
};

std::string take(char* s) {
  std::string out = s != nullptr ? s : "";
  ibv_string_free(s);
  return out;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ibv_capi_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

TEST(CApi, Version) { EXPECT_STREQ(ibv_version(), "0.1.0"); }

TEST(CApi, ConfigErrorsAreUsageErrors) {
  ibv_config* c = nullptr;
  EXPECT_EQ(ibv_config_from_json("{not json", &c), IBV_ERR_USAGE);
  EXPECT_EQ(c, nullptr);
  EXPECT_NE(std::strlen(ibv_last_error()), 0u);
  EXPECT_EQ(ibv_config_from_json(R"({"train": {"bogus": 1}})", &c), IBV_ERR_USAGE);
  EXPECT_NE(std::string(ibv_last_error()).find("train.bogus"), std::string::npos);
  EXPECT_EQ(ibv_config_from_json("[1, 2]", &c), IBV_ERR_USAGE);
  EXPECT_EQ(ibv_config_from_json(nullptr, nullptr), IBV_ERR_USAGE);
  EXPECT_EQ(ibv_config_load("/nonexistent.json", &c), IBV_ERR_DATA);
}

TEST(CApi, SetChecksTypesAndValidateChecksConsistency) {
  ibv_config* c = nullptr;
  ASSERT_EQ(ibv_config_from_json(nullptr, &c), IBV_OK);
  EXPECT_EQ(std::strlen(ibv_last_error()), 0u);
  EXPECT_EQ(ibv_config_set(c, "train.batch=x"), IBV_ERR_USAGE);
  EXPECT_EQ(ibv_config_set(c, "model.heads=2,2"), IBV_OK);
  EXPECT_EQ(ibv_config_validate(c), IBV_ERR_USAGE);
  EXPECT_EQ(ibv_config_set(c, "model.levels=1"), IBV_OK);
  EXPECT_EQ(ibv_config_validate(c), IBV_OK);
  char* json = nullptr;
  ASSERT_EQ(ibv_config_json(c, &json), IBV_OK);
  const std::string text = take(json);
  EXPECT_NE(text.find("\"levels\": 1"), std::string::npos) << text;
  ibv_config_free(c);
}

TEST(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(ibv_volume_load(nullptr, nullptr), IBV_ERR_USAGE);
  EXPECT_EQ(ibv_phantom_generate(nullptr, "/tmp/x"), IBV_ERR_USAGE);
  EXPECT_EQ(ibv_evaluate(nullptr, "c", nullptr, nullptr, nullptr), IBV_ERR_USAGE);
  int64_t g[3] = {8, 8, 8};
  EXPECT_EQ(ibv_profile(g, 16, nullptr, nullptr, nullptr), IBV_ERR_USAGE);
}

TEST(CApi, Profile) {
  int64_t g[3] = {32, 32, 24}, w[3] = {4, 4, 4};
  char* json = nullptr;
  char* table = nullptr;
  ASSERT_EQ(ibv_profile(g, 128, w, &json, &table), IBV_OK);
  const std::string j = take(json), t = take(table);
  EXPECT_NE(j.find("\"flops_ibmsa\":2013265920"), std::string::npos) << j;
  EXPECT_NE(t.find("reduction"), std::string::npos);
  int64_t bad[3] = {30, 32, 24};
  EXPECT_EQ(ibv_profile(bad, 128, w, nullptr, nullptr), IBV_ERR_DATA);
}

TEST(CApi, PhantomIsReproducible) {
  Config cfg;
  const fs::path a = scratch("ph_a"), b = scratch("ph_b");
  ASSERT_EQ(ibv_phantom_generate(cfg.c, a.c_str()), IBV_OK) << ibv_last_error();
  ASSERT_EQ(ibv_phantom_generate(cfg.c, b.c_str()), IBV_OK) << ibv_last_error();
  for (const char* f : {"image.rvol", "liver.rvol", "vessel.rvol"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  ibv_volume* v = nullptr;
  ASSERT_EQ(ibv_volume_load((a / "vessel.rvol").c_str(), &v), IBV_OK);
  int64_t e[3];
  double sp[3];
  int mask = 0;
  ASSERT_EQ(ibv_volume_info(v, e, sp, &mask), IBV_OK);
  EXPECT_EQ(e[0], 20);
  EXPECT_EQ(sp[2], 1.0);
  EXPECT_EQ(mask, 1);
  const float* data = nullptr;
  int64_t n = 0;
  ASSERT_EQ(ibv_volume_data(v, &data, &n), IBV_OK);
  EXPECT_EQ(n, 8000);
  ibv_volume_free(v);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(CApi, PipelineEndToEnd) {
  Config cfg;
  const fs::path root = scratch("pipe");
  const fs::path raw = root / "case", prep = root / "prep", run = root / "run";
  ASSERT_EQ(ibv_phantom_generate(cfg.c, raw.c_str()), IBV_OK) << ibv_last_error();
  ASSERT_EQ(ibv_preprocess(cfg.c, raw.c_str(), prep.c_str()), IBV_OK) << ibv_last_error();
  const char* dirs[] = {prep.c_str()};
  char* report = nullptr;
  ASSERT_EQ(ibv_train(cfg.c, dirs, 1, run.c_str(), nullptr, &report), IBV_OK) << ibv_last_error();
  const std::string r = take(report);
  EXPECT_NE(r.find("\"steps\":2"), std::string::npos) << r;
  EXPECT_TRUE(fs::exists(run / "loss.csv"));

  ibv_volume* image = nullptr;
  ibv_volume* truth = nullptr;
  ibv_volume* prob = nullptr;
  ASSERT_EQ(ibv_volume_load((prep / "image.rvol").c_str(), &image), IBV_OK);
  ASSERT_EQ(ibv_volume_load((prep / "truth.rvol").c_str(), &truth), IBV_OK);
  ASSERT_EQ(ibv_infer(cfg.c, run.c_str(), image, &prob), IBV_OK) << ibv_last_error();
  const float* p = nullptr;
  int64_t n = 0;
  ASSERT_EQ(ibv_volume_data(prob, &p, &n), IBV_OK);
  for (int64_t i = 0; i < n; ++i) ASSERT_TRUE(p[i] >= 0.0f && p[i] <= 1.0f);
  char* row = nullptr;
  ASSERT_EQ(ibv_evaluate(cfg.c, "c1", prob, truth, &row), IBV_OK) << ibv_last_error();
  const std::string metrics = take(row);
  EXPECT_NE(metrics.find("\"dice\""), std::string::npos) << metrics;
  EXPECT_NE(metrics.find("\"c1\""), std::string::npos) << metrics;

  // Resuming a finished run trains no further steps.
  ASSERT_EQ(ibv_train(cfg.c, dirs, 1, (root / "run2").c_str(), run.c_str(), &report), IBV_OK) << ibv_last_error();
  EXPECT_EQ(slurp(run / "checkpoint" / "params.bin"), slurp(root / "run2" / "checkpoint" / "params.bin"));
  ibv_string_free(report);

  ibv_volume_free(image);
  ibv_volume_free(truth);
  ibv_volume_free(prob);
  fs::remove_all(root);
}

TEST(CApi, MismatchedExtentsAreDataErrors) {
  Config cfg;
  const fs::path a = scratch("mm_a"), b = scratch("mm_b");
  ASSERT_EQ(ibv_phantom_generate(cfg.c, a.c_str()), IBV_OK);
  ASSERT_EQ(ibv_config_set(cfg.c, "phantom.extents=20,20,24"), IBV_OK);
  ASSERT_EQ(ibv_phantom_generate(cfg.c, b.c_str()), IBV_OK);
  ibv_volume* p = nullptr;
  ibv_volume* t = nullptr;
  ASSERT_EQ(ibv_volume_load((a / "image.rvol").c_str(), &p), IBV_OK);
  ASSERT_EQ(ibv_volume_load((b / "vessel.rvol").c_str(), &t), IBV_OK);
  char* row = nullptr;
  EXPECT_EQ(ibv_evaluate(cfg.c, "c", p, t, &row), IBV_ERR_DATA);
  EXPECT_EQ(row, nullptr);
  const std::string msg = ibv_last_error();
  EXPECT_NE(msg.find("(20,20,20)"), std::string::npos) << msg;
  EXPECT_NE(msg.find("(20,20,24)"), std::string::npos) << msg;
  ibv_volume_free(p);
  ibv_volume_free(t);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(CApi, MissingCheckpointIsADataError) {
  Config cfg;
  const fs::path a = scratch("nock");
  ASSERT_EQ(ibv_phantom_generate(cfg.c, a.c_str()), IBV_OK);
  ibv_volume* img = nullptr;
  ASSERT_EQ(ibv_volume_load((a / "image.rvol").c_str(), &img), IBV_OK);
  ibv_volume* prob = nullptr;
  EXPECT_EQ(ibv_infer(cfg.c, a.c_str(), img, &prob), IBV_ERR_DATA);
  EXPECT_EQ(prob, nullptr);
  ibv_volume_free(img);
  fs::remove_all(a);
}

}  // namespace
