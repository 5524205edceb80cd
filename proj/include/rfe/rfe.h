/*
 * C API for the RFE continual-learning library.
 *
 * All entry points return rfe_status_t; on failure rfe_last_error() holds a
 * human-readable message for the calling thread, valid until the next API
 * call on that thread. Handles are opaque and must be released with
 * rfe_experiment_close().
 */
#ifndef RFE_H
#define RFE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rfe_status {
  RFE_OK = 0,
  RFE_ERR_RUNTIME = 1,    /* any failure not covered below */
  RFE_ERR_CONFIG = 2,     /* invalid or inconsistent configuration */
  RFE_ERR_DIVERGENCE = 3, /* training produced a non-finite loss/gradient */
  RFE_ERR_IO = 4          /* filesystem or container-format failure */
} rfe_status_t;

typedef struct rfe_experiment rfe_experiment_t;

const char* rfe_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* rfe_last_error(void);

/* Parses the config file; validation happens when an action runs. */
rfe_status_t rfe_experiment_open(const char* config_path, rfe_experiment_t** out);

/* KEY is section.key, e.g. "strategy.alpha". */
rfe_status_t rfe_experiment_override(rfe_experiment_t* exp, const char* key, const char* value);
rfe_status_t rfe_experiment_set_seed(rfe_experiment_t* exp, uint64_t seed);
rfe_status_t rfe_experiment_set_out_dir(rfe_experiment_t* exp, const char* dir);

/* Trains over the configured stream and writes all artifacts to the output
 * directory: accuracy.csv, predictions.csv, cil_probabilities.csv,
 * training_log.txt, checkpoint.rfew, manifest.json, and optional rmse.csv,
 * snapshots/ and pca_task*.csv. */
rfe_status_t rfe_experiment_run(rfe_experiment_t* exp);

/* Re-evaluates a checkpoint against the configured stream (no training). */
rfe_status_t rfe_experiment_eval(rfe_experiment_t* exp, const char* checkpoint_path);

/* PCA export of original/drifted/rectified features for one task, from the
 * artifacts of a finished run directory. */
rfe_status_t rfe_experiment_export_pca(rfe_experiment_t* exp, const char* run_dir, int eval_task);

/* Parameter counts and strategy-matrix conformance as printable text.
 * *out_text is heap-allocated; release it with rfe_string_free(). */
rfe_status_t rfe_experiment_inspect(rfe_experiment_t* exp, char** out_text);

void rfe_string_free(char* s);
void rfe_experiment_close(rfe_experiment_t* exp);

#ifdef __cplusplus
}
#endif

#endif /* RFE_H */
