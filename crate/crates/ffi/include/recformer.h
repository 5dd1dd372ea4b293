#ifndef RECFORMER_H
#define RECFORMER_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RF_STATUS_NULL_ARGUMENT = 1,
  RF_STATUS_INVALID_ARGUMENT = 2,
  RF_STATUS_IO = 3,
  RF_STATUS_PARSE = 4,
  RF_STATUS_SHAPE = 5,
  RF_STATUS_INVALID_MASK = 6,
  RF_STATUS_CONFIG = 7,
  RF_STATUS_INFEASIBLE = 8,
  /**
   * Training produced a non-finite loss.
   */
  RF_STATUS_NUMERIC = 9,
  /**
   * Caller buffer too small; the required length was written back.
   */
  RF_STATUS_BUFFER_TOO_SMALL = 10,
  RF_STATUS_INTERNAL = 11,
} RfStatus;

/**
 * Loaded or generated multi-view dataset.
 */
typedef struct RfDataset RfDataset;

/**
 * Availability mask, `n × m`.
 */
typedef struct RfMask RfMask;

/**
 * Finished training run.
 */
typedef struct RfRun RfRun;

/**
 * Hyperparameters for [`rf_run_train`]. Start from
 * [`rf_train_options_default`].
 */
typedef struct RfTrainOptions {
  double lr;
  double beta;
  size_t k_neighbors;
  size_t e1;
  size_t e2;
  size_t batch_size;
  uint64_t seed;
  size_t kmeans_restarts;
  bool reinit_stage2;
  /**
   * 0 takes the class count from the dataset.
   */
  size_t clusters;
  size_t d_e;
  size_t heads;
  size_t layers;
  size_t mlp_hidden;
  bool residual;
  double ln_eps;
} RfTrainOptions;

typedef struct RfMetrics {
  double acc;
  double nmi;
  double purity;
} RfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *rf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rf_version(void);

/**
 * Loads a dataset directory (`meta.json`, `view_<v>.csv`, optional
 * `labels.csv`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RfStatus rf_dataset_load(const char *path, struct RfDataset **out);

/**
 * Planted-cluster dataset with `m` views of widths `dims[0..m]`.
 *
 * # Safety
 * `dims` must point to `m` values and `out` must be writable.
 */
enum RfStatus rf_dataset_synth(size_t n,
                               size_t classes,
                               const size_t *dims,
                               size_t m,
                               double noise,
                               uint64_t seed,
                               struct RfDataset **out);

/**
 * Sample count.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum RfStatus rf_dataset_n(const struct RfDataset *ds, size_t *out);

/**
 * View count.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum RfStatus rf_dataset_m(const struct RfDataset *ds, size_t *out);

/**
 * Width of view `v` (zero-based).
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum RfStatus rf_dataset_dim(const struct RfDataset *ds, size_t v, size_t *out);

/**
 * # Safety
 * `ds` must be null or a handle not freed before.
 */
void rf_dataset_free(struct RfDataset *ds);

/**
 * Removes `round(rate · n)` rows from every view, keeping at least one
 * view per sample.
 *
 * # Safety
 * `out` must be writable.
 */
enum RfStatus rf_mask_generate(size_t n, size_t m, double rate, uint64_t seed, struct RfMask **out);

/**
 * Two-view mask where a `paired_rate` fraction of samples keeps both views.
 *
 * # Safety
 * `out` must be writable.
 */
enum RfStatus rf_mask_generate_paired(size_t n,
                                      double paired_rate,
                                      uint64_t seed,
                                      struct RfMask **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RfStatus rf_mask_load(const char *path, struct RfMask **out);

/**
 * # Safety
 * `mask` must be a live handle and `path` a NUL-terminated string.
 */
enum RfStatus rf_mask_save(const struct RfMask *mask, const char *path);

/**
 * Writes 1 if view `v` of sample `i` is available, else 0.
 *
 * # Safety
 * `mask` must be a live handle and `out` writable.
 */
enum RfStatus rf_mask_get(const struct RfMask *mask, size_t i, size_t v, uint8_t *out);

/**
 * # Safety
 * `mask` must be null or a handle not freed before.
 */
void rf_mask_free(struct RfMask *mask);

/**
 * Library defaults.
 */
struct RfTrainOptions rf_train_options_default(void);

/**
 * Runs both training stages and k-means.
 *
 * # Safety
 * `ds`, `mask` and `opts` must be live, `out` writable.
 */
enum RfStatus rf_run_train(const struct RfDataset *ds,
                           const struct RfMask *mask,
                           const struct RfTrainOptions *opts,
                           struct RfRun **out);

/**
 * Copies the `n` cluster ids into `buf`. When `cap < n` nothing is copied,
 * `*len` receives `n` and the call returns `BufferTooSmall`.
 *
 * # Safety
 * `run` must be live, `buf` must hold `cap` values, `len` writable.
 */
enum RfStatus rf_run_predictions(const struct RfRun *run, size_t *buf, size_t cap, size_t *len);

/**
 * Copies the row-major `n × d_e` fused representation into `buf`, with the
 * same size protocol as [`rf_run_predictions`].
 *
 * # Safety
 * `run` must be live, `buf` must hold `cap` values, `len` writable.
 */
enum RfStatus rf_run_embeddings(const struct RfRun *run, double *buf, size_t cap, size_t *len);

/**
 * Metrics of the run. Writes 0 to `*has_labels` (and leaves `out`
 * untouched) when the dataset had no labels.
 *
 * # Safety
 * `run` must be live; `out` and `has_labels` writable.
 */
enum RfStatus rf_run_metrics(const struct RfRun *run, struct RfMetrics *out, uint8_t *has_labels);

/**
 * Writes the full run directory.
 *
 * # Safety
 * `run` must be live and `dir` a NUL-terminated string.
 */
enum RfStatus rf_run_write(const struct RfRun *run, const char *dir);

/**
 * # Safety
 * `run` must be null or a handle not freed before.
 */
void rf_run_free(struct RfRun *run);

/**
 * ACC, NMI and purity of `pred` against `truth`, both of length `n`.
 *
 * # Safety
 * `pred` and `truth` must hold `n` values; `out` writable.
 */
enum RfStatus rf_evaluate(const size_t *pred, const size_t *truth, size_t n, struct RfMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECFORMER_H */
