#ifndef SOHFORGE_H
#define SOHFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SohStatus {
  SOH_OK = 0,
  SOH_ERR_NULL_POINTER = 1,
  SOH_ERR_INVALID_ARGUMENT = 2,
  SOH_ERR_IO = 3,
  SOH_ERR_PARSE = 4,
  SOH_ERR_COMPUTE = 5,
  SOH_ERR_PANIC = 6,
} SohStatus;

/**
 * A trained CNN estimator.
 */
typedef struct SohCnn SohCnn;

/**
 * Loaded or generated cycle data.
 */
typedef struct SohDataset SohDataset;

/**
 * A trained random forest.
 */
typedef struct SohForest SohForest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *soh_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *soh_version(void);

/**
 * Relative error `|t - e| / t * 100`, in percent.
 */
enum SohStatus soh_mae(double soh_true, double soh_est, double *out);

/**
 * Generates a synthetic dataset. `spec_json` may be null for defaults.
 */
enum SohStatus soh_dataset_synthetic(const char *spec_json, struct SohDataset **out);

enum SohStatus soh_dataset_load_csv(const char *path, struct SohDataset **out);

enum SohStatus soh_dataset_write_csv(const struct SohDataset *dataset, const char *path);

enum SohStatus soh_dataset_cell_count(const struct SohDataset *dataset, size_t *out);

enum SohStatus soh_dataset_cycle_count(const struct SohDataset *dataset, size_t cell, size_t *out);

/**
 * True SOH of the `cycle`-th stored cycle of `cell` (positions, not
 * cycle indices).
 */
enum SohStatus soh_dataset_soh(const struct SohDataset *dataset,
                               size_t cell,
                               size_t cycle,
                               double *out);

void soh_dataset_free(struct SohDataset *dataset);

/**
 * Loads an estimator checkpoint written by `sohforge train`.
 */
enum SohStatus soh_cnn_load(const char *path, struct SohCnn **out);

enum SohStatus soh_cnn_input_length(const struct SohCnn *cnn, size_t *out);

/**
 * 2 for the direct SOH network, 4 for the increment network.
 */
enum SohStatus soh_cnn_channels(const struct SohCnn *cnn, size_t *out);

/**
 * Estimate from raw window samples: voltage in V and cumulative
 * discharged capacity in Ah. Direct networks return SOH and ignore the
 * past window; increment networks need it and return the SOH change.
 */
enum SohStatus soh_cnn_predict_window(const struct SohCnn *cnn,
                                      const double *voltage,
                                      const double *capacity,
                                      size_t len,
                                      const double *past_voltage,
                                      const double *past_capacity,
                                      size_t past_len,
                                      double *out);

void soh_cnn_free(struct SohCnn *cnn);

enum SohStatus soh_forest_load(const char *path, struct SohForest **out);

enum SohStatus soh_forest_feature_count(const struct SohForest *forest, size_t *out);

enum SohStatus soh_forest_predict(const struct SohForest *forest,
                                  const double *features,
                                  size_t len,
                                  double *out);

void soh_forest_free(struct SohForest *forest);

/**
 * Runs a cross-validated evaluation from a JSON experiment config and
 * writes the report files to `output_dir`. `jobs` = 0 uses every core.
 */
enum SohStatus soh_evaluate(const char *config_json, const char *output_dir, size_t jobs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOHFORGE_H */
