/* C interface of the TrajFusionNet library.
 *
 * Every function returns a tfn_status. On failure the message of the most
 * recent error on the calling thread is available from tfn_last_error().
 * Objects are opaque handles released with the matching *_free function.
 * Strings returned through char** outputs are owned by the caller and
 * released with tfn_string_free. Structured results are JSON documents.
 */
#ifndef TRAJFUSION_H
#define TRAJFUSION_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tfn_status {
  TFN_OK = 0,
  TFN_ERR_INVALID_ARGUMENT = 1, /* bad value, unknown key, null pointer */
  TFN_ERR_IO = 2,               /* file missing or unreadable */
  TFN_ERR_DATA = 3,             /* malformed or insufficient data */
  TFN_ERR_DIMENSION = 4,        /* tensor shape mismatch */
  TFN_ERR_STATE = 5,            /* call order violated, e.g. a missing training stage */
  TFN_ERR_INTERNAL = 6
} tfn_status;

typedef struct tfn_config tfn_config;
typedef struct tfn_dataset tfn_dataset;
typedef struct tfn_model tfn_model;

/* Called after every training epoch. `stage` is a stage name. */
typedef void (*tfn_progress_fn)(const char* stage, int epoch, void* user);
/* Called once per finished gradient-check case with a JSON object. */
typedef void (*tfn_report_fn)(const char* json, void* user);

const char* tfn_version(void);
const char* tfn_status_name(tfn_status s);
const char* tfn_last_error(void);
void tfn_string_free(char* s);

/* ---- configuration (key=value, see README) ---- */

/* `preset` is "reference" or "desk". */
tfn_status tfn_config_create(const char* preset, tfn_config** out);
tfn_status tfn_config_set(tfn_config* cfg, const char* key, const char* value);
/* Applies a key=value file; a preset line in the file is applied first. */
tfn_status tfn_config_apply_file(tfn_config* cfg, const char* path);
/* Same, but a preset line in the file is ignored. */
tfn_status tfn_config_apply_file_keys(tfn_config* cfg, const char* path);
/* Training configuration stored in a manifest. */
tfn_status tfn_config_from_manifest(const char* manifest_path, tfn_config** out);
tfn_status tfn_config_to_json(const tfn_config* cfg, char** out_json);
void tfn_config_free(tfn_config* cfg);

/* ---- datasets ---- */

/* Writes a synthetic dataset with `n_tracks` pedestrians. With `write_frames`
 * the frames are rendered to PPM files, otherwise they are regenerated on
 * demand from the seed. */
tfn_status tfn_dataset_generate(const char* dir, int n_tracks, uint64_t seed, int write_frames);
/* Loads a dataset directory using the sampling options of `cfg`. */
tfn_status tfn_dataset_open(const char* dir, const tfn_config* cfg, tfn_dataset** out);
tfn_status tfn_dataset_summary(const tfn_dataset* data, char** out_json);
void tfn_dataset_free(tfn_dataset* data);

/* ---- training ---- */

/* Runs every stage, evaluates on the test split and writes the manifest,
 * checkpoints and logs under `out_dir`. */
tfn_status tfn_train_all(const tfn_config* cfg, const tfn_dataset* data, const char* out_dir,
                         tfn_progress_fn progress, void* user, char** out_json);
/* Trains one stage. Earlier stages are restored from the manifest in
 * `out_dir`. Stage names: trajpred, sam, van1, van2, fusion. */
tfn_status tfn_train_stage(const tfn_config* cfg, const tfn_dataset* data, const char* out_dir, const char* stage,
                           tfn_progress_fn progress, void* user, char** out_json);
/* Retrains the stages affected by each scenario (1-6) starting from the base
 * manifest, evaluates on the test split and writes ablation.csv. */
tfn_status tfn_run_ablation(const tfn_config* cfg, const tfn_dataset* data, const char* base_manifest,
                            const int* scenarios, size_t n_scenarios, const char* out_dir, char** out_json);

/* ---- models ---- */

/* Untrained model. `variant` is "full" or "small"; scenario 0 is the base model. */
tfn_status tfn_model_create(const char* variant, int scenario, int64_t image_size, uint64_t seed, tfn_model** out);
tfn_status tfn_model_load(const char* manifest_path, tfn_model** out);
tfn_status tfn_model_param_count(const tfn_model* model, int64_t* out);
/* Configuration and per-module parameter counts. */
tfn_status tfn_model_info(const tfn_model* model, char** out_json);
/* Metrics on "train", "val" or "test". */
tfn_status tfn_model_evaluate(const tfn_model* model, const tfn_dataset* data, const char* split, char** out_json);
/* One sample, given as "<split>:<index>" or "<pedestrian id>@<frame>". */
tfn_status tfn_model_predict(const tfn_model* model, const tfn_dataset* data, const char* sample,
                             double* probability, int* label);
/* Per-sample latency on one thread over `n_runs` (at least 10) measured runs. */
tfn_status tfn_model_benchmark(const tfn_model* model, const tfn_dataset* data, int n_warmup, int n_runs,
                               char** out_json);
void tfn_model_free(tfn_model* model);

/* Report footer with the cited preprocessing costs of other methods. */
const char* tfn_latency_footer(void);
/* Table-style CSV of benchmark results given as a JSON array of reports. */
tfn_status tfn_latency_csv(const char* reports_json, char** out_csv);

/* ---- gradient checks ---- */

/* Runs the finite-difference suite over `seeds` seeds. `group` may be NULL
 * for all groups. `*all_passed` is set to 1 when every case passed. */
tfn_status tfn_grad_check(int seeds, const char* group, tfn_report_fn report, void* user, int* all_passed,
                          char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* TRAJFUSION_H */
