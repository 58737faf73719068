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

// Command-line front end. Talks to the library only through the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "ibimhav/ibimhav.h"

namespace {

namespace fs = std::filesystem;

struct ApiFailure {
  ibv_status status;
  std::string context;
};

void check(ibv_status s, const std::string& context) {
  if (s != IBV_OK) throw ApiFailure{s, context};
}

struct ConfigDeleter {
  void operator()(ibv_config* c) const { ibv_config_free(c); }
};
struct VolumeDeleter {
  void operator()(ibv_volume* v) const { ibv_volume_free(v); }
};
using ConfigPtr = std::unique_ptr<ibv_config, ConfigDeleter>;
using VolumePtr = std::unique_ptr<ibv_volume, VolumeDeleter>;

std::string take(char* s) {
  std::string out = s != nullptr ? s : "";
  ibv_string_free(s);
  return out;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file (e.g. presets/desk.json)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a configuration value, KEY=VALUE with a dotted key")->take_all();
  cmd->add_option("--threads", c.threads, "Worker threads for inference (results do not depend on it)")
      ->check(CLI::PositiveNumber);
}

ConfigPtr make_config(const Common& c, const std::vector<std::string>& extra) {
  ibv_config* raw = nullptr;
  if (c.config.empty()) {
    check(ibv_config_from_json(nullptr, &raw), "configuration");
  } else {
    check(ibv_config_load(c.config.c_str(), &raw), "--config " + c.config);
  }
  ConfigPtr cfg(raw);
  for (const auto& s : c.sets) check(ibv_config_set(cfg.get(), s.c_str()), "--set " + s);
  for (const auto& s : extra) check(ibv_config_set(cfg.get(), s.c_str()), s);
  if (c.threads > 0) check(ibv_config_set(cfg.get(), ("threads=" + std::to_string(c.threads)).c_str()), "--threads");
  check(ibv_config_validate(cfg.get()), "configuration");
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ApiFailure{IBV_ERR_DATA, "cannot write " + path.string()};
  f << text;
  if (!f) throw ApiFailure{IBV_ERR_DATA, "cannot write " + path.string()};
}

void snapshot(const ibv_config* cfg, const fs::path& path) {
  char* json = nullptr;
  check(ibv_config_json(cfg, &json), "configuration snapshot");
  write_text(path, take(json) + "\n");
}

VolumePtr load(const std::string& path, const std::string& flag) {
  ibv_volume* v = nullptr;
  check(ibv_volume_load(path.c_str(), &v), flag + " " + path);
  return VolumePtr(v);
}

std::string join3(const std::vector<std::int64_t>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric hepatic vessel segmentation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ibv_version()));

  Common common;
  std::vector<std::string> extra;

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic vessel phantom case directory");
  add_common(phantom, common);
  std::string phantom_out;
  std::int64_t phantom_seed = -1;
  phantom->add_option("--out", phantom_out, "Output case directory")->required();
  phantom->add_option("--seed", phantom_seed, "Phantom seed (phantom.seed)")->check(CLI::NonNegativeNumber);

  auto* prep = app.add_subcommand("preprocess", "Crop, resize, clamp and normalize a case directory");
  add_common(prep, common);
  std::string prep_case, prep_out;
  prep->add_option("--case", prep_case, "Case directory with image.rvol, liver.rvol, vessel.rvol")
      ->required()
      ->check(CLI::ExistingDirectory);
  prep->add_option("--out", prep_out, "Output directory for the prepared case")->required();

  auto* train = app.add_subcommand("train", "Train on prepared case directories");
  add_common(train, common);
  std::vector<std::string> train_data;
  std::string train_out, train_resume;
  train->add_option("--data", train_data, "Prepared case directories")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "Output directory (checkpoint/, loss.csv, config.json)")->required();
  train->add_option("--resume", train_resume, "Continue from an earlier output or checkpoint directory")
      ->check(CLI::ExistingDirectory);

  auto* infer = app.add_subcommand("infer", "Sliding-window inference to a probability volume");
  add_common(infer, common);
  std::string infer_ckpt, infer_image, infer_out;
  std::int64_t infer_stride = 0;
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint or training output directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  infer->add_option("--image", infer_image, "Prepared image volume (.rvol)")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", infer_out, "Output probability volume (.rvol)")->required();
  infer->add_option("--stride", infer_stride, "Patch stride (infer.stride)")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Threshold, post-process and score a probability volume");
  add_common(eval, common);
  std::string eval_pred, eval_truth, eval_out, eval_id = "case";
  double eval_threshold = -1, eval_min = -1;
  int eval_conn = 0, eval_close = -1;
  eval->add_option("--pred", eval_pred, "Probability volume (.rvol)")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", eval_truth, "Ground-truth mask (.rvol)")->required()->check(CLI::ExistingFile);
  eval->add_option("--case-id", eval_id, "Case identifier for the metrics row");
  eval->add_option("--out", eval_out, "Also write the metrics row to this JSON file");
  eval->add_option("--threshold", eval_threshold, "Vessel threshold (eval.threshold)")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--min-component-mm3", eval_min, "Smallest kept component, 0 disables (eval.min_component_mm3)")
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--connectivity", eval_conn, "Component connectivity (eval.connectivity)")
      ->check(CLI::IsMember({6, 26}));
  eval->add_option("--close-radius", eval_close, "Closing radius, 0 disables (eval.close_radius)")
      ->check(CLI::NonNegativeNumber);

  auto* profile = app.add_subcommand("profile", "Attention cost report for a token grid");
  std::vector<std::int64_t> prof_grid, prof_window{4, 4, 4};
  std::int64_t prof_dim = 0;
  bool prof_table = false;
  profile->add_option("--grid", prof_grid, "Token grid h,w,d")->required()->delimiter(',')->expected(3);
  profile->add_option("--dim", prof_dim, "Channels C")->required()->check(CLI::PositiveNumber);
  profile->add_option("--window", prof_window, "Window S_H,S_W,S_D")->delimiter(',')->expected(3);
  profile->add_flag("--table", prof_table, "Print a human-readable table instead of JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*phantom) {
      if (phantom_seed >= 0) extra.push_back("phantom.seed=" + std::to_string(phantom_seed));
      ConfigPtr cfg = make_config(common, extra);
      check(ibv_phantom_generate(cfg.get(), phantom_out.c_str()), "phantom --out " + phantom_out);
      snapshot(cfg.get(), fs::path(phantom_out) / "config.json");
    } else if (*prep) {
      ConfigPtr cfg = make_config(common, extra);
      check(ibv_preprocess(cfg.get(), prep_case.c_str(), prep_out.c_str()), "preprocess --case " + prep_case);
      snapshot(cfg.get(), fs::path(prep_out) / "config.json");
    } else if (*train) {
      ConfigPtr cfg = make_config(common, extra);
      std::vector<const char*> dirs;
      for (const auto& d : train_data) dirs.push_back(d.c_str());
      char* report = nullptr;
      check(ibv_train(cfg.get(), dirs.data(), dirs.size(), train_out.c_str(),
                      train_resume.empty() ? nullptr : train_resume.c_str(), &report),
            "train --out " + train_out);
      snapshot(cfg.get(), fs::path(train_out) / "config.json");
      std::cout << take(report) << "\n";
    } else if (*infer) {
      if (infer_stride > 0) extra.push_back("infer.stride=" + std::to_string(infer_stride));
      ConfigPtr cfg = make_config(common, extra);
      VolumePtr image = load(infer_image, "--image");
      ibv_volume* prob = nullptr;
      check(ibv_infer(cfg.get(), infer_ckpt.c_str(), image.get(), &prob), "infer --checkpoint " + infer_ckpt);
      VolumePtr out(prob);
      check(ibv_volume_save(out.get(), infer_out.c_str()), "--out " + infer_out);
      snapshot(cfg.get(), infer_out + ".config.json");
    } else if (*eval) {
      if (eval_threshold >= 0) extra.push_back("eval.threshold=" + std::to_string(eval_threshold));
      if (eval_min >= 0) extra.push_back("eval.min_component_mm3=" + std::to_string(eval_min));
      if (eval_conn > 0) extra.push_back("eval.connectivity=" + std::to_string(eval_conn));
      if (eval_close >= 0) extra.push_back("eval.close_radius=" + std::to_string(eval_close));
      ConfigPtr cfg = make_config(common, extra);
      VolumePtr pred = load(eval_pred, "--pred");
      VolumePtr truth = load(eval_truth, "--truth");
      char* row = nullptr;
      check(ibv_evaluate(cfg.get(), eval_id.c_str(), pred.get(), truth.get(), &row),
            "eval --pred " + eval_pred + " --truth " + eval_truth);
      const std::string text = take(row);
      if (!eval_out.empty()) {
        write_text(eval_out, text + "\n");
        snapshot(cfg.get(), eval_out + ".config.json");
      }
      std::cout << text << "\n";
    } else if (*profile) {
      char* json = nullptr;
      char* table = nullptr;
      check(ibv_profile(prof_grid.data(), prof_dim, prof_window.data(), &json, &table),
            "profile --grid " + join3(prof_grid) + " --window " + join3(prof_window));
      const std::string j = take(json), t = take(table);
      std::cout << (prof_table ? t : j) << "\n";
    }
  } catch (const ApiFailure& f) {
    const std::string detail = ibv_last_error();
    std::cerr << "error: " << f.context << ": " << (detail.empty() ? "failed" : detail) << "\n";
    return static_cast<int>(f.status);
  }
  return 0;
}
