#ifndef MARGREG_H
#define MARGREG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible call.
 */
typedef enum MargregStatus {
  MARGREG_STATUS_OK = 0,
  MARGREG_STATUS_NULL_POINTER = 1,
  MARGREG_STATUS_INVALID_ARGUMENT = 2,
  MARGREG_STATUS_SHAPE = 3,
  MARGREG_STATUS_IO = 4,
  MARGREG_STATUS_FORMAT = 5,
  MARGREG_STATUS_NON_FINITE = 6,
  MARGREG_STATUS_STABILITY = 7,
  MARGREG_STATUS_INTERNAL = 8,
} MargregStatus;

typedef enum MargregActivation {
  MARGREG_ACTIVATION_RELU = 0,
  MARGREG_ACTIVATION_SOFTPLUS = 1,
} MargregActivation;

/**
 * Which input gradient to compute.
 */
typedef enum MargregVariant {
  /**
   * Gradient of the label logit; `classes` holds the labels.
   */
  MARGREG_VARIANT_INPUT_GRAD = 0,
  /**
   * Literal ratio of summed exponentials; may overflow.
   */
  MARGREG_VARIANT_MARGINAL_NAIVE = 1,
  /**
   * Two backward passes; `classes` picks the class per row.
   */
  MARGREG_VARIANT_MARGINAL_STABLE = 2,
  /**
   * One backward pass; `classes` picks the class per row.
   */
  MARGREG_VARIANT_MARGINAL_EFFICIENT = 3,
} MargregVariant;

/**
 * Opaque model handle.
 */
typedef struct MargregModel MargregModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on this thread.
 */
const char *margreg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *margreg_version(void);

/**
 * Glorot-initialized fully connected model with `n_sizes` layer widths.
 *
 * # Safety
 * `sizes` must point to `n_sizes` values; `out` must be writable.
 */
enum MargregStatus margreg_model_init(const size_t *sizes,
                                      size_t n_sizes,
                                      enum MargregActivation activation,
                                      uint64_t seed,
                                      struct MargregModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MargregStatus margreg_model_load(const char *path, struct MargregModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum MargregStatus margreg_model_save(const struct MargregModel *model, const char *path);

/**
 * Releases a handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void margreg_model_free(struct MargregModel *model);

/**
 * Input width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t margreg_model_input_dim(const struct MargregModel *model);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t margreg_model_class_count(const struct MargregModel *model);

/**
 * Logits for a row-major `rows × cols` batch into `out`
 * (`rows × classes` values).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum MargregStatus margreg_model_forward(const struct MargregModel *model,
                                         const double *x,
                                         size_t rows,
                                         size_t cols,
                                         double *out,
                                         size_t out_len);

/**
 * Per-row input gradient of the chosen variant into `out` (`rows × cols`
 * values). `classes` holds `rows` class indices; it is ignored by the
 * naive variant and may then be null. `finite` (nullable) receives whether
 * every entry is finite.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum MargregStatus margreg_input_gradient(const struct MargregModel *model,
                                          enum MargregVariant variant,
                                          const double *x,
                                          size_t rows,
                                          size_t cols,
                                          const size_t *classes,
                                          double *out,
                                          size_t out_len,
                                          bool *finite);

/**
 * Rank-statistic AUROC of in- versus out-of-distribution scores.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum MargregStatus margreg_auroc(const double *in_scores,
                                 size_t n_in,
                                 const double *out_scores,
                                 size_t n_out,
                                 double *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARGREG_H */
