#ifndef SINR_H
#define SINR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `SINR_STATUS_OK` is zero.
 */
typedef enum SinrStatus {
  SINR_STATUS_OK = 0,
  SINR_STATUS_NULL_POINTER = 1,
  SINR_STATUS_INVALID_ARGUMENT = 2,
  SINR_STATUS_IO = 3,
  /**
   * Not a model file, unsupported version, truncated or corrupt.
   */
  SINR_STATUS_INVALID_FILE = 4,
  SINR_STATUS_UNKNOWN_SPECIES = 5,
  /**
   * The model needs environmental rasters, which this interface does not
   * take.
   */
  SINR_STATUS_UNSUPPORTED = 6,
  SINR_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * A bug: an internal error or a caught panic.
   */
  SINR_STATUS_INTERNAL = 8,
} SinrStatus;

/**
 * A loaded model.
 */
typedef struct SinrModelHandle SinrModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sinr_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into the library from this thread.
 */
const char *sinr_last_error(void);

/**
 * Loads a model file. On success `*out_model` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` a valid pointer.
 */
enum SinrStatus sinr_model_load(const char *path, struct SinrModelHandle **out_model);

/**
 * Releases a handle from [`sinr_model_load`]. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void sinr_model_free(struct SinrModelHandle *model);

/**
 * Number of species the model predicts.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SinrStatus sinr_model_n_species(const struct SinrModelHandle *model, size_t *out_n);

/**
 * Output column of a species id.
 *
 * # Safety
 * Pointers must be valid and `species_id` NUL-terminated.
 */
enum SinrStatus sinr_model_species_index(const struct SinrModelHandle *model,
                                         const char *species_id,
                                         size_t *out_index);

/**
 * Copies the id of output column `index` into `buf` with a terminating NUL.
 * `*out_len` receives the id length without the NUL, also when the buffer
 * is too small.
 *
 * # Safety
 * `buf` must hold `buf_len` bytes; other pointers must be valid.
 */
enum SinrStatus sinr_model_species_id(const struct SinrModelHandle *model,
                                      size_t index,
                                      char *buf,
                                      size_t buf_len,
                                      size_t *out_len);

/**
 * Presence probabilities at `n` locations, written row-major into `out`
 * (`n` rows of `n_species` values). Only models trained on coordinates
 * alone are supported.
 *
 * # Safety
 * `lons` and `lats` must hold `n` values and `out` `out_len` values.
 */
enum SinrStatus sinr_model_predict(const struct SinrModelHandle *model,
                                   const double *lons,
                                   const double *lats,
                                   size_t n,
                                   float *out,
                                   size_t out_len);

/**
 * The four-value sinusoidal encoding of a coordinate.
 *
 * # Safety
 * `out` must hold 4 values.
 */
enum SinrStatus sinr_encode_location(double lon, double lat, double *out);

/**
 * Average precision of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values.
 */
enum SinrStatus sinr_average_precision(const double *scores,
                                       const uint8_t *labels,
                                       size_t n,
                                       double *out_ap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINR_H */
