/*
 * agcnn C API.
 *
 * All handles are opaque. Every function returns an agcnn_status; on failure
 * agcnn_last_error() describes the problem (thread-local, valid until the next
 * call on the same thread). Strings returned through `char**` out-parameters
 * are owned by the caller and released with agcnn_string_free().
 * Configuration is passed as JSON text.
 */
#ifndef AGCNN_AGCNN_H
#define AGCNN_AGCNN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define AGCNN_API __declspec(dllexport)
#else
#define AGCNN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum agcnn_status {
  AGCNN_OK = 0,
  AGCNN_ERR_INVALID_ARGUMENT = 1,
  AGCNN_ERR_IO = 2,
  AGCNN_ERR_PARSE = 3,
  AGCNN_ERR_DATA = 4,
  AGCNN_ERR_SHAPE = 5,
  AGCNN_ERR_NUMERIC = 6,
  AGCNN_ERR_DOMAIN = 7,
  AGCNN_ERR_FORMAT = 8,
  AGCNN_ERR_INTERNAL = 9
} agcnn_status;

typedef struct agcnn_dataset agcnn_dataset;
typedef struct agcnn_model agcnn_model;

AGCNN_API const char* agcnn_version(void);
AGCNN_API const char* agcnn_status_string(agcnn_status status);
AGCNN_API const char* agcnn_last_error(void);
AGCNN_API void agcnn_string_free(char* s);

/*
 * Loads trajectory files, cuts them into windows and splits them.
 * Keys (all optional except one data source):
 *   "files": [paths], "column_order": "frame_ped_x_y" | "frame_ped_y_x" | "ped_frame_x_y",
 *   "frame_stride": int (0 infers), "dt": seconds,
 *   "synthetic": {"scenes", "num_peds", "num_steps", "area", "min_speed", "max_speed",
 *                 "max_turn", "constant_velocity", "seed"},
 *   "t_obs", "t_pred", "window_stride", "split": [train, val, test], "split_seed".
 */
AGCNN_API agcnn_status agcnn_dataset_load(const char* config_json, agcnn_dataset** out);
AGCNN_API void agcnn_dataset_free(agcnn_dataset* ds);
/* Sample counts of the train, val and test splits. */
AGCNN_API agcnn_status agcnn_dataset_counts(const agcnn_dataset* ds, size_t counts[3]);
/* Writes ground-truth windows of `split` ("train", "val", "test") as CSV. */
AGCNN_API agcnn_status agcnn_dataset_export_csv(const agcnn_dataset* ds, const char* split,
                                                const char* csv_path);

/* Fresh model from a training config (see README for keys). */
AGCNN_API agcnn_status agcnn_model_create(const char* train_config_json, agcnn_model** out);
AGCNN_API agcnn_status agcnn_model_load(const char* checkpoint_path, agcnn_model** out);
AGCNN_API agcnn_status agcnn_model_save(const agcnn_model* model, const char* checkpoint_path);
AGCNN_API void agcnn_model_free(agcnn_model* model);
AGCNN_API agcnn_status agcnn_model_param_count(const agcnn_model* model, size_t* out);
AGCNN_API agcnn_status agcnn_model_epoch(const agcnn_model* model, size_t* out);
AGCNN_API agcnn_status agcnn_model_config(const agcnn_model* model, char** out_json);
/* Replaces config fields (e.g. "epochs") of a loaded model; the architecture must not change. */
AGCNN_API agcnn_status agcnn_model_update_config(agcnn_model* model, const char* json);

/*
 * Trains on the train split until the configured epoch count is reached.
 * Appends one JSON record per epoch to `log_path` and rewrites
 * `checkpoint_path` after every epoch (either may be NULL). On divergence the
 * model keeps the last good state and AGCNN_ERR_NUMERIC is returned.
 */
AGCNN_API agcnn_status agcnn_model_train(agcnn_model* model, const agcnn_dataset* ds,
                                         const char* log_path, const char* checkpoint_path);

/*
 * Metrics on `split` as JSON lines (per-scene records plus aggregates).
 * Options: "mode": "best_of_n" | "most_likely" | "deterministic", "draws",
 * "seed", "granularity": "per_pedestrian" | "per_scene", "baselines": bool,
 * "per_scene": bool.
 */
AGCNN_API agcnn_status agcnn_model_evaluate(const agcnn_model* model, const agcnn_dataset* ds,
                                            const char* split, const char* options_json,
                                            char** out_jsonl);

/*
 * Writes predictions for `split` as CSV with header
 * scene_id,ped_id,step,sample_id,x,y,mu_x,mu_y,sigma_x,sigma_y,rho.
 * sample_id -1 is ground truth, -2 the mean (or deterministic) prediction,
 * 0..draws-1 sampled trajectories. Options: "draws", "seed", "max_scenes".
 */
AGCNN_API agcnn_status agcnn_model_predict_csv(const agcnn_model* model, const agcnn_dataset* ds,
                                               const char* split, const char* options_json,
                                               const char* csv_path);

/* Inference timing on `split`. Options: "draws", "repetitions", "max_scenes", "seed". */
AGCNN_API agcnn_status agcnn_model_benchmark(const agcnn_model* model, const agcnn_dataset* ds,
                                             const char* split, const char* options_json,
                                             char** out_json);

#ifdef __cplusplus
}
#endif

#endif
