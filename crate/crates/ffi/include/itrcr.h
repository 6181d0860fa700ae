#ifndef ITRCR_H
#define ITRCR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ItrcrStatus {
  ITRCR_STATUS_OK = 0,
  ITRCR_STATUS_NULL_POINTER = 1,
  ITRCR_STATUS_INVALID_ARGUMENT = 2,
  ITRCR_STATUS_CONFIG = 3,
  ITRCR_STATUS_DATA = 4,
  ITRCR_STATUS_IO = 5,
  ITRCR_STATUS_NUMERIC = 6,
  ITRCR_STATUS_PANIC = 7,
} ItrcrStatus;

/**
 * Opaque dataset handle.
 */
typedef struct ItrcrDataset ItrcrDataset;

/**
 * Opaque fitted-model handle.
 */
typedef struct ItrcrModel ItrcrModel;

/**
 * Fitting options. Start from `itrcr_fit_options_default`.
 */
typedef struct ItrcrFitOptions {
  double alpha_phi;
  /**
   * Horizon; `<= 0` uses the dataset's.
   */
  double tau;
  size_t n_tree;
  size_t n_min;
  size_t n_minevent;
  double alpha_reg;
  double psi_split;
  double subsample_fraction;
  uint64_t seed;
  /**
   * Worker threads; 0 uses the global pool.
   */
  size_t threads;
} ItrcrFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *itrcr_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *itrcr_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ItrcrStatus itrcr_dataset_load(const char *path, struct ItrcrDataset **out);

/**
 * # Safety
 * `ds` must come from `itrcr_dataset_load` and not be used afterwards.
 */
void itrcr_dataset_free(struct ItrcrDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle; `n` and `p` must be writable.
 */
enum ItrcrStatus itrcr_dataset_shape(const struct ItrcrDataset *ds, size_t *n, size_t *p);

struct ItrcrFitOptions itrcr_fit_options_default(void);

/**
 * Fits per-arm forests. `options` may be null for defaults.
 *
 * # Safety
 * `ds` must be a live dataset handle; `options` null or readable; `out` writable.
 */
enum ItrcrStatus itrcr_model_fit(const struct ItrcrDataset *ds,
                                 const struct ItrcrFitOptions *options,
                                 struct ItrcrModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ItrcrStatus itrcr_model_load(const char *path, struct ItrcrModel **out);

/**
 * # Safety
 * `model` must be a live model handle; `path` a NUL-terminated string.
 */
enum ItrcrStatus itrcr_model_save(const struct ItrcrModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void itrcr_model_free(struct ItrcrModel *model);

/**
 * Copies up to `cap` treatment labels into `labels` and stores the total
 * count in `count`. Pass `cap = 0` to query the count.
 *
 * # Safety
 * `model` must be live; `labels` must hold `cap` elements; `count` writable.
 */
enum ItrcrStatus itrcr_model_treatments(const struct ItrcrModel *model,
                                        uint32_t *labels,
                                        size_t cap,
                                        size_t *count);

/**
 * Predicted restricted mean survival (`phi1`) and cause-1 incidence area
 * (`phi2`) at covariates `z` under `treatment`.
 *
 * # Safety
 * `model` must be live; `z` must hold `p` values; outputs writable.
 */
enum ItrcrStatus itrcr_model_criteria(const struct ItrcrModel *model,
                                      const double *z,
                                      size_t p,
                                      uint32_t treatment,
                                      double *phi1,
                                      double *phi2);

/**
 * Recommends a treatment for covariates `z`. `feasible` lists the allowed
 * labels; null with `n_feasible = 0` allows every arm. `phase` receives 1 or 2.
 *
 * # Safety
 * `model` must be live; `z` must hold `p` values; `feasible` must hold
 * `n_feasible` labels; outputs writable.
 */
enum ItrcrStatus itrcr_model_recommend(const struct ItrcrModel *model,
                                       const double *z,
                                       size_t p,
                                       const uint32_t *feasible,
                                       size_t n_feasible,
                                       uint32_t *treatment,
                                       uint32_t *phase);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ITRCR_H */
