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

#include "ibimhav/ibimhav.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "ibimhav/config.hpp"
#include "ibimhav/errors.hpp"
#include "ibimhav/profiler.hpp"

struct ibv_config {
  nlohmann::json doc;  // user overlay on the defaults
};

struct ibv_volume {
  ibv::Volume v;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
ibv_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return IBV_OK;
  } catch (const ibv::ConfigError& e) {
    g_last_error = e.what();
    return IBV_ERR_USAGE;
  } catch (const ibv::NumericalError& e) {
    g_last_error = e.what();
    return IBV_ERR_NUMERIC;
  } catch (const ibv::InternalError& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return IBV_ERR_INTERNAL;
  } catch (const ibv::Error& e) {
    g_last_error = e.what();
    return IBV_ERR_DATA;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return IBV_ERR_DATA;
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return IBV_ERR_DATA;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return IBV_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return IBV_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw ibv::ConfigError(std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ibv::Grid3 grid_of(const int64_t v[3]) { return {v[0], v[1], v[2]}; }

// Cross-field checks run here, so overrides may pass through inconsistent
// intermediate states.
ibv::RunConfig resolve(const ibv_config* cfg) {
  require(cfg, "config");
  return ibv::run_config_from_json(cfg->doc);
}

std::filesystem::path checkpoint_path(const char* dir) {
  const std::filesystem::path p(dir);
  return std::filesystem::exists(p / "checkpoint") ? p / "checkpoint" : p;
}

}  // namespace

extern "C" {

const char* ibv_last_error(void) { return g_last_error.c_str(); }

const char* ibv_version(void) { return "0.1.0"; }

void ibv_string_free(char* s) { std::free(s); }

ibv_status ibv_config_from_json(const char* json, ibv_config** out) {
  return guard([&] {
    require(out, "out");
    *out = nullptr;
    nlohmann::json doc = nlohmann::json::object();
    if (json != nullptr) {
      try {
        doc = nlohmann::json::parse(json);
      } catch (const nlohmann::json::parse_error& e) {
        throw ibv::ConfigError(std::string("configuration is not valid JSON: ") + e.what());
      }
    }
    if (!doc.is_object()) throw ibv::ConfigError("configuration must be a JSON object");
    auto cfg = std::make_unique<ibv_config>();
    cfg->doc = std::move(doc);
    resolve(cfg.get());
    *out = cfg.release();
  });
}

ibv_status ibv_config_load(const char* path, ibv_config** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto cfg = std::make_unique<ibv_config>();
    cfg->doc = ibv::read_json_file(path);
    resolve(cfg.get());
    *out = cfg.release();
  });
}

ibv_status ibv_config_set(ibv_config* cfg, const char* assignment) {
  return guard([&] {
    require(cfg, "config");
    require(assignment, "assignment");
    ibv::apply_override(cfg->doc, assignment);
  });
}

ibv_status ibv_config_validate(const ibv_config* cfg) {
  return guard([&] { resolve(cfg); });
}

ibv_status ibv_config_json(const ibv_config* cfg, char** out) {
  return guard([&] {
    require(out, "out");
    *out = dup_string(ibv::to_json(resolve(cfg)).dump(2));
  });
}

void ibv_config_free(ibv_config* cfg) { delete cfg; }

ibv_status ibv_volume_load(const char* path, ibv_volume** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto v = std::make_unique<ibv_volume>();
    v->v = ibv::load_volume(path);
    *out = v.release();
  });
}

ibv_status ibv_volume_save(const ibv_volume* v, const char* path) {
  return guard([&] {
    require(v, "volume");
    require(path, "path");
    ibv::save_volume(v->v, path);
  });
}

ibv_status ibv_volume_info(const ibv_volume* v, int64_t extents[3], double spacing[3], int* is_mask) {
  return guard([&] {
    require(v, "volume");
    const ibv::Grid3 e = v->v.extents();
    for (int a = 0; a < 3; ++a) {
      if (extents != nullptr) extents[a] = e[a];
      if (spacing != nullptr) spacing[a] = v->v.spacing[a];
    }
    if (is_mask != nullptr) *is_mask = v->v.kind == ibv::VolumeKind::kMask ? 1 : 0;
  });
}

ibv_status ibv_volume_data(const ibv_volume* v, const float** data, int64_t* count) {
  return guard([&] {
    require(v, "volume");
    if (data != nullptr) *data = v->v.data.ptr();
    if (count != nullptr) *count = v->v.voxels();
  });
}

void ibv_volume_free(ibv_volume* v) { delete v; }

ibv_status ibv_phantom_generate(const ibv_config* cfg, const char* out_dir) {
  return guard([&] {
    require(cfg, "config");
    require(out_dir, "out_dir");
    const std::filesystem::path dir(out_dir);
    ibv::save_case(ibv::generate_phantom(resolve(cfg).phantom, dir.filename().string()), dir);
  });
}

ibv_status ibv_preprocess(const ibv_config* cfg, const char* case_dir, const char* out_dir) {
  return guard([&] {
    require(cfg, "config");
    require(case_dir, "case_dir");
    require(out_dir, "out_dir");
    ibv::save_prepared_case(ibv::preprocess_case(ibv::load_case(case_dir), resolve(cfg).preprocess), out_dir);
  });
}

ibv_status ibv_train(const ibv_config* cfg, const char* const* case_dirs, size_t num_cases, const char* out_dir,
                     const char* resume_dir, char** report) {
  return guard([&] {
    require(cfg, "config");
    require(out_dir, "out_dir");
    if (num_cases == 0) throw ibv::ConfigError("training needs at least one prepared case");
    require(case_dirs, "case_dirs");
    std::vector<ibv::PreparedCase> cases;
    for (size_t i = 0; i < num_cases; ++i) {
      require(case_dirs[i], "case directory");
      cases.push_back(ibv::load_prepared_case(case_dirs[i]));
    }
    const ibv::RunConfig rc = resolve(cfg);
    ibv::Network<float> net(rc.model, rc.seed);
    ibv::Trainer trainer(net, std::move(cases), rc.train);
    if (resume_dir != nullptr) trainer.load_checkpoint(checkpoint_path(resume_dir));
    const ibv::TrainResult result = trainer.run_all();
    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    trainer.save_checkpoint(out / "checkpoint", {{"config", ibv::to_json(rc)}});
    ibv::write_loss_csv(out / "loss.csv", result.steps);
    if (report != nullptr) {
      nlohmann::json r = {{"steps", trainer.state().step},
                          {"epoch_loss", result.epoch_loss},
                          {"checkpoint", (out / "checkpoint").string()}};
      r["final_loss"] = result.steps.empty() ? nlohmann::json(nullptr) : nlohmann::json(result.steps.back().loss);
      *report = dup_string(r.dump());
    }
  });
}

ibv_status ibv_infer(const ibv_config* cfg, const char* checkpoint_dir, const ibv_volume* image,
                     ibv_volume** probability) {
  return guard([&] {
    require(cfg, "config");
    require(checkpoint_dir, "checkpoint_dir");
    require(image, "image");
    require(probability, "probability");
    *probability = nullptr;
    const std::filesystem::path dir = checkpoint_path(checkpoint_dir);
    nlohmann::json meta;
    ibv::load_tensors(dir, &meta);
    if (!meta.contains("extra") || !meta["extra"].contains("config")) {
      throw ibv::FormatError("checkpoint " + dir.string() + " carries no model configuration");
    }
    const ibv::RunConfig trained = ibv::run_config_from_json(meta["extra"]["config"]);
    ibv::Network<float> net(trained.model, trained.seed);
    ibv::load_model_params(net, dir);
    auto out = std::make_unique<ibv_volume>();
    const ibv::RunConfig rc = resolve(cfg);
    out->v = ibv::infer_sliding(net, image->v, rc.infer.stride, rc.threads);
    *probability = out.release();
  });
}

ibv_status ibv_evaluate(const ibv_config* cfg, const char* case_id, const ibv_volume* probability,
                        const ibv_volume* truth, char** row) {
  return guard([&] {
    require(cfg, "config");
    require(probability, "probability");
    require(truth, "truth");
    require(row, "row");
    *row = dup_string(
        ibv::evaluate_case(case_id != nullptr ? case_id : "case", probability->v, truth->v, resolve(cfg).eval).dump());
  });
}

ibv_status ibv_profile(const int64_t grid[3], int64_t dim, const int64_t window[3], char** report_json,
                       char** table) {
  return guard([&] {
    require(grid, "grid");
    require(window, "window");
    const ibv::CostReport r = ibv::cost_report(grid_of(grid), dim, ibv::WindowConfig{grid_of(window)});
    if (report_json != nullptr) *report_json = dup_string(r.to_json().dump());
    if (table != nullptr) *table = dup_string(r.table());
  });
}

}  // extern "C"
