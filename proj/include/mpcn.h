/*
 * C interface to the review-based rating prediction library.
 *
 * All functions return mpcn_status; anything but MPCN_OK leaves a
 * human-readable message in mpcn_last_error() (thread-local). Objects are
 * opaque handles created and destroyed through this interface. Strings
 * returned through char** out-parameters are heap-allocated and must be
 * released with mpcn_string_free().
 */
#ifndef MPCN_H
#define MPCN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mpcn_status {
  MPCN_OK = 0,
  MPCN_ERR_USAGE = 1,   /* bad arguments or configuration */
  MPCN_ERR_DATA = 2,    /* I/O, format, or incompatible-artifact errors */
  MPCN_ERR_NUMERIC = 3  /* numeric failures (non-finite values, shape errors) */
} mpcn_status;

typedef struct mpcn_config mpcn_config;     /* experiment configuration (key=value) */
typedef struct mpcn_snapshot mpcn_snapshot; /* prepared dataset */
typedef struct mpcn_model mpcn_model;       /* model plus its parameters */

const char* mpcn_version(void);

/* Message of the most recent failure on this thread; empty string if none. */
const char* mpcn_last_error(void);

void mpcn_string_free(char* s);

/* --- configuration ----------------------------------------------------- */

mpcn_config* mpcn_config_create(void);
void mpcn_config_destroy(mpcn_config* cfg);
mpcn_status mpcn_config_set(mpcn_config* cfg, const char* key, const char* value);
mpcn_status mpcn_config_get(const mpcn_config* cfg, const char* key, char** value_out);
/* Merge key = value lines from a file; '#' starts a comment. */
mpcn_status mpcn_config_load_file(mpcn_config* cfg, const char* path);

/* --- dataset preparation ------------------------------------------------ */

/* Parse a JSON-lines corpus, apply the k-core filter, split by time, build
 * the vocabulary and the per-user/per-item review banks. */
mpcn_status mpcn_snapshot_prepare(const char* corpus_path, const mpcn_config* cfg,
                                  mpcn_snapshot** out);
mpcn_status mpcn_snapshot_load(const char* path, mpcn_snapshot** out);
mpcn_status mpcn_snapshot_save(const mpcn_snapshot* snap, const char* path);
void mpcn_snapshot_destroy(mpcn_snapshot* snap);
mpcn_status mpcn_snapshot_stats_json(const mpcn_snapshot* snap, char** json_out);

/* --- models -------------------------------------------------------------- */

/* Model kind and hyperparameters come from the configuration ("model" is one
 * of mpcn|mf|fm|mlp; "precision" is f32|f64). */
mpcn_status mpcn_model_create(const mpcn_config* cfg, const mpcn_snapshot* snap,
                              mpcn_model** out);
mpcn_status mpcn_model_load(const char* path, mpcn_model** out);
mpcn_status mpcn_model_save(const mpcn_model* model, const char* path);
void mpcn_model_destroy(mpcn_model* model);

/* --- training and evaluation ---------------------------------------------- */

/* Adam over the mean-squared-error objective with early stopping on the dev
 * split; the model ends up holding the best-dev parameters. history_path may
 * be NULL; otherwise one JSON line is appended per epoch. Out-parameters may
 * be NULL. */
mpcn_status mpcn_train(mpcn_model* model, const mpcn_snapshot* snap, const char* history_path,
                       double* best_dev_mse_out, int* best_epoch_out, int* early_stopped_out);

/* split is one of "train", "dev", "test". */
mpcn_status mpcn_evaluate(const mpcn_model* model, const mpcn_snapshot* snap, const char* split,
                          double* mse_out, int64_t* count_out);

/* --- pointer analysis ------------------------------------------------------ */

/* Pointer-behavior report over a seeded sample of the test split (JSON). */
mpcn_status mpcn_analyze_pointers(const mpcn_model* model, const mpcn_snapshot* snap,
                                  int64_t sample_size, uint64_t seed, char** json_out);

/* Per-head review affinity matrices as <out_prefix>.head<h>.csv plus a
 * <out_prefix>.pointers.json sidecar; files_json_out (optional) receives a
 * JSON array of the paths written. */
mpcn_status mpcn_export_affinity(const mpcn_model* model, const mpcn_snapshot* snap,
                                 const char* user_id, const char* item_id,
                                 const char* out_prefix, char** files_json_out);

#ifdef __cplusplus
}
#endif

#endif /* MPCN_H */
