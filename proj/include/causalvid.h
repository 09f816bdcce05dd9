/* Copyright (C) 2026 The causalvid authors */
/* SPDX-License-Identifier: Apache-2.0 */

/*
 * C interface of the causalvid library.
 *
 * Every call returns a cvs_status. On failure the calling thread's last
 * error message is available from cvs_last_error() until its next call.
 * Configurations travel as JSON text; results come back as cvs_text
 * handles owned by the caller.
 */

#ifndef CAUSALVID_H
#define CAUSALVID_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CVS_API __declspec(dllexport)
#else
#define CVS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as process exit codes of the command-line tool. */
typedef enum cvs_status {
  CVS_OK = 0,
  CVS_ERR_INTERNAL = 1, /* unexpected failure */
  CVS_ERR_USAGE = 2,    /* invalid invocation: missing or conflicting arguments */
  CVS_ERR_CONFIG = 3,   /* invalid configuration value */
  CVS_ERR_CHAIN = 4,    /* training stage chain violation */
  CVS_ERR_NUMERIC = 5,  /* non-finite values or failed factorization */
  CVS_ERR_IO = 6,       /* missing, unreadable or malformed files */
  CVS_ERR_CONTRACT = 7  /* shape or precondition violation */
} cvs_status;

typedef struct cvs_text cvs_text;   /* owned UTF-8 string */
typedef struct cvs_model cvs_model; /* backbone loaded from a checkpoint */

CVS_API const char* cvs_version(void);
CVS_API const char* cvs_status_name(cvs_status status);
/* Message of the last failed call on this thread; "" after a success. */
CVS_API const char* cvs_last_error(void);

CVS_API const char* cvs_text_data(const cvs_text* text);
CVS_API size_t cvs_text_size(const cvs_text* text);
CVS_API void cvs_text_free(cvs_text* text);

/*
 * Fills defaults and validates a configuration. `kind` is one of
 * "scenario", "stage", "infer", "eval". `*out` receives the resolved JSON.
 */
CVS_API cvs_status cvs_resolve_config(const char* kind, const char* json, cvs_text** out);

/*
 * Writes n synthetic clips plus manifest.tsv under out_dir. `scenario_json`
 * may be NULL for defaults. `*manifest_path` (optional) receives the path.
 */
CVS_API cvs_status cvs_generate_dataset(const char* scenario_json, int n, uint64_t seed, double test_fraction,
                                        const char* out_dir, cvs_text** manifest_path);

/*
 * Runs one training stage. `*result_json` (optional) receives
 * {"checkpoint", "loss_log", "final_loss"}. Progress lines go to stderr
 * when `verbose` is nonzero.
 */
CVS_API cvs_status cvs_train_stage(const char* stage_json, int verbose, cvs_text** result_json);

CVS_API cvs_status cvs_model_load(const char* checkpoint_path, cvs_model** out);
CVS_API void cvs_model_free(cvs_model* model);
/* Model configuration JSON of a loaded checkpoint. */
CVS_API cvs_status cvs_model_config(const cvs_model* model, cvs_text** out);

/*
 * Samples one clip with the model (hooks detached) and writes config.json,
 * frames/, grid.ppm and metrics.txt under out_dir. When `model` is NULL the
 * request's checkpoint is loaded. `*result_json` (optional) receives
 * {"frame_hash", "prompt", "metrics"}.
 */
CVS_API cvs_status cvs_infer(const cvs_model* model, const char* infer_json, const char* out_dir,
                             cvs_text** result_json);

/*
 * Evaluates run directories. Writes the metric report to `report_path`
 * when it is not NULL; `*report` (optional) receives the report text.
 */
CVS_API cvs_status cvs_evaluate(const char* eval_json, const char* report_path, cvs_text** report);

/* Frame hash of a run directory's frames/. */
CVS_API cvs_status cvs_frames_hash(const char* frames_dir, cvs_text** out);

#ifdef __cplusplus
}
#endif

#endif /* CAUSALVID_H */
