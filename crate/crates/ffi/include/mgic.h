#ifndef MGIC_H
#define MGIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  MGIC_STATUS_OK = 0,
  MGIC_STATUS_NULL_POINTER = 1,
  MGIC_STATUS_INVALID_ARGUMENT = 2,
  MGIC_STATUS_CONFIG = 3,
  MGIC_STATUS_DIMENSION = 4,
  MGIC_STATUS_NUMERICAL = 5,
  MGIC_STATUS_FORMAT = 6,
  MGIC_STATUS_CORRUPT = 7,
  MGIC_STATUS_VERSION = 8,
  MGIC_STATUS_IO = 9,
  MGIC_STATUS_BUFFER_TOO_SMALL = 10,
  MGIC_STATUS_PANIC = 11,
} MgicStatus;

/**
 * A network and its parameters.
 */
typedef struct MgicModel MgicModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *mgic_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mgic_version(void);

/**
 * Builds a freshly initialised network from an architecture JSON document.
 *
 * # Safety
 * `arch_json` must be a NUL-terminated string and `out` a valid pointer.
 */
MgicStatus mgic_model_from_json(const char *arch_json, uint64_t seed, MgicModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
MgicStatus mgic_model_load(const char *path, MgicModel **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
MgicStatus mgic_model_save(const MgicModel *model, const char *path);

/**
 * Total number of learnable scalars.
 *
 * # Safety
 * `model` must come from this library and `out` be valid.
 */
MgicStatus mgic_model_param_count(const MgicModel *model, uint64_t *out);

/**
 * Per-sample input shape `[C, H, W]`.
 *
 * # Safety
 * `model` must come from this library and `out` point to 3 writable values.
 */
MgicStatus mgic_model_input_shape(const MgicModel *model, size_t *out);

/**
 * Eval-mode forward pass on `batch` samples laid out `N×C×H×W`.
 *
 * The output element count is stored in `written`. If `output_len` is too
 * small nothing is written to `output` and `MGIC_STATUS_BUFFER_TOO_SMALL`
 * is returned, with the required length in `written`.
 *
 * # Safety
 * `input` must hold `batch·C·H·W` floats, `output` `output_len` floats.
 */
MgicStatus mgic_model_forward(const MgicModel *model,
                              const float *input,
                              size_t batch,
                              float *output,
                              size_t output_len,
                              size_t *written);

/**
 * Cost report of one sample as JSON, NUL-terminated.
 *
 * `needed` receives the byte length including the terminator. Pass a null
 * or short buffer to query it (`MGIC_STATUS_BUFFER_TOO_SMALL`).
 *
 * # Safety
 * `buf` must hold `len` bytes or be null.
 */
MgicStatus mgic_model_cost_json(const MgicModel *model, char *buf, size_t len, size_t *needed);

/**
 * Closed-form weight count of a simple-conv MGIC block.
 *
 * # Safety
 * `out` must be valid.
 */
MgicStatus mgic_closed_form_params(size_t c, size_t s_g, size_t s_c, size_t d, uint64_t *out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void mgic_model_free(MgicModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGIC_H */
