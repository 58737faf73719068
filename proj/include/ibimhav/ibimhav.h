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

#ifndef IBIMHAV_IBIMHAV_H
#define IBIMHAV_IBIMHAV_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define IBV_API __declspec(dllexport)
#else
#define IBV_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ibv_status {
  IBV_OK = 0,
  IBV_ERR_USAGE = 1,    /* invalid configuration or arguments */
  IBV_ERR_DATA = 2,     /* unreadable, malformed or mismatched data */
  IBV_ERR_NUMERIC = 3,  /* non-finite values during training */
  IBV_ERR_INTERNAL = 4
} ibv_status;

/* Message of the last failure on the calling thread; empty after success. */
IBV_API const char* ibv_last_error(void);
IBV_API const char* ibv_version(void);
/* Releases strings returned through char** out-parameters. */
IBV_API void ibv_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

typedef struct ibv_config ibv_config;

/* json may be NULL for the built-in defaults. */
IBV_API ibv_status ibv_config_from_json(const char* json, ibv_config** out);
IBV_API ibv_status ibv_config_load(const char* path, ibv_config** out);
/* Applies one dotted override, e.g. "train.lr=0.03". Only the key and the
 * value type are checked here; cross-field consistency is checked by
 * ibv_config_validate and by every call that consumes the configuration. */
IBV_API ibv_status ibv_config_set(ibv_config* cfg, const char* assignment);
IBV_API ibv_status ibv_config_validate(const ibv_config* cfg);
/* Full effective configuration as pretty-printed JSON. */
IBV_API ibv_status ibv_config_json(const ibv_config* cfg, char** out);
IBV_API void ibv_config_free(ibv_config* cfg);

/* ---- volumes ---------------------------------------------------------- */

typedef struct ibv_volume ibv_volume;

IBV_API ibv_status ibv_volume_load(const char* path, ibv_volume** out);
IBV_API ibv_status ibv_volume_save(const ibv_volume* v, const char* path);
/* Any of the output pointers may be NULL. */
IBV_API ibv_status ibv_volume_info(const ibv_volume* v, int64_t extents[3], double spacing[3], int* is_mask);
/* Row-major [H, W, D] samples, z fastest; valid until the volume is freed. */
IBV_API ibv_status ibv_volume_data(const ibv_volume* v, const float** data, int64_t* count);
IBV_API void ibv_volume_free(ibv_volume* v);

/* ---- pipeline --------------------------------------------------------- */

/* Writes image.rvol, liver.rvol and vessel.rvol for the phantom section. */
IBV_API ibv_status ibv_phantom_generate(const ibv_config* cfg, const char* out_dir);

/* Reads a case directory (image/liver/vessel) and writes image, label,
 * truth and liver volumes of the prepared case into out_dir. */
IBV_API ibv_status ibv_preprocess(const ibv_config* cfg, const char* case_dir, const char* out_dir);

/* Trains on prepared case directories. Writes out_dir/checkpoint,
 * out_dir/loss.csv and returns a JSON report. resume_dir may be NULL. */
IBV_API ibv_status ibv_train(const ibv_config* cfg, const char* const* case_dirs, size_t num_cases,
                             const char* out_dir, const char* resume_dir, char** report);

/* Sliding-window inference with the model stored in a checkpoint; the
 * model section of the checkpoint's configuration is used. */
IBV_API ibv_status ibv_infer(const ibv_config* cfg, const char* checkpoint_dir, const ibv_volume* image,
                             ibv_volume** probability);

/* Threshold, post-process and score; returns one metrics row as JSON. */
IBV_API ibv_status ibv_evaluate(const ibv_config* cfg, const char* case_id, const ibv_volume* probability,
                                const ibv_volume* truth, char** row);

/* Attention cost report for a token grid. Either output may be NULL. */
IBV_API ibv_status ibv_profile(const int64_t grid[3], int64_t dim, const int64_t window[3], char** report_json,
                               char** table);

#ifdef __cplusplus
}
#endif

#endif
