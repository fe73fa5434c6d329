#ifndef NDISTILL_H
#define NDISTILL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum {
  ND_STATUS_OK = 0,
  ND_STATUS_NULL_POINTER = 1,
  ND_STATUS_INVALID_ARGUMENT = 2,
  ND_STATUS_IO = 3,
  ND_STATUS_BAD_MAGIC = 4,
  ND_STATUS_VERSION_MISMATCH = 5,
  ND_STATUS_FINGERPRINT_MISMATCH = 6,
  ND_STATUS_CORRUPT = 7,
  ND_STATUS_SHAPE = 8,
  ND_STATUS_NON_FINITE = 9,
  ND_STATUS_BUFFER_TOO_SMALL = 10,
  ND_STATUS_RUNTIME = 11,
  ND_STATUS_PANIC = 12,
} NdStatus;

/**
 * An activation cache read into memory.
 */
typedef struct NdCache NdCache;

/**
 * A loaded network.
 */
typedef struct NdModel NdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call on the same thread.
 */
const char *nd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nd_version(void);

/**
 * Loads an NDCK checkpoint into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
NdStatus nd_model_load(const char *path, NdModel **out);

/**
 * Writes the model as an NDCK checkpoint.
 *
 * # Safety
 * `model` must come from [`nd_model_load`]; `path` must be NUL-terminated.
 */
NdStatus nd_model_save(const NdModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`nd_model_load`] and not be used afterwards.
 */
void nd_model_free(NdModel *model);

/**
 * Trainable parameter count, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from [`nd_model_load`].
 */
uint64_t nd_model_param_count(const NdModel *model);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from [`nd_model_load`].
 */
uint64_t nd_model_class_count(const NdModel *model);

/**
 * Number of neighbourhoods, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from [`nd_model_load`].
 */
uint64_t nd_model_neighbourhood_count(const NdModel *model);

/**
 * Per-sample input shape `[C, H, W]`.
 *
 * # Safety
 * `model` must come from [`nd_model_load`]; `out` must hold 3 values.
 */
NdStatus nd_model_input_shape(const NdModel *model, uint64_t *out);

/**
 * Logits for `batch` samples laid out `[N, C, H, W]` (row-major f32).
 * `out` receives `batch × class_count` values.
 *
 * # Safety
 * `input` must hold `batch × C × H × W` floats and `out` `out_len` floats.
 */
NdStatus nd_model_forward(const NdModel *model,
                          const float *input,
                          uint64_t batch,
                          float *out,
                          uint64_t out_len);

/**
 * Opens an NDAC activation cache. When `check_fingerprint` is nonzero the
 * stored dataset fingerprint must equal `expected_fingerprint`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
NdStatus nd_cache_open(const char *path,
                       bool check_fingerprint,
                       uint64_t expected_fingerprint,
                       NdCache **out);

/**
 * Releases a cache. Null is ignored.
 *
 * # Safety
 * `cache` must come from [`nd_cache_open`] and not be used afterwards.
 */
void nd_cache_free(NdCache *cache);

/**
 * Writes the tensor rank to `*rank` and, when `dims` is non-null, up to
 * `cap` dimensions (sample count first).
 *
 * # Safety
 * `cache` must come from [`nd_cache_open`]; `dims` must hold `cap` values.
 */
NdStatus nd_cache_dims(const NdCache *cache, uint64_t *dims, uint64_t cap, uint64_t *rank);

/**
 * Dataset fingerprint stored in the cache, or 0 for a null handle.
 *
 * # Safety
 * `cache` must be null or come from [`nd_cache_open`].
 */
uint64_t nd_cache_fingerprint(const NdCache *cache);

/**
 * Copies all activations (row-major f32) into `out`.
 *
 * # Safety
 * `cache` must come from [`nd_cache_open`]; `out` must hold `len` floats.
 */
NdStatus nd_cache_read(const NdCache *cache, float *out, uint64_t len);

/**
 * Target sparsity of the cubic ramp at step `t`; NaN for an invalid
 * schedule.
 */
double nd_sparsity_at_step(double final_sparsity,
                           uint64_t ramp_steps,
                           uint64_t hold_steps,
                           uint64_t t);

/**
 * Number of students in the search space: the product of the candidate
 * set sizes, saturating at `UINT64_MAX`.
 *
 * # Safety
 * `sizes` must hold `n` values (it may be null when `n` is 0).
 */
uint64_t nd_search_space_size(const uint64_t *sizes, uint64_t n);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NDISTILL_H */
