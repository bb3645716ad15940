/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef ILDVIT_H
#define ILDVIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IldvitStatus {
  ILDVIT_STATUS_OK = 0,
  ILDVIT_STATUS_NULL_ARGUMENT = 1,
  ILDVIT_STATUS_INVALID_ARGUMENT = 2,
  ILDVIT_STATUS_IO = 3,
  ILDVIT_STATUS_WAV_FORMAT = 4,
  ILDVIT_STATUS_CHECKPOINT = 5,
  ILDVIT_STATUS_CONFIG = 6,
  ILDVIT_STATUS_EMPTY = 7,
  ILDVIT_STATUS_INTERNAL = 8,
  ILDVIT_STATUS_PANIC = 9,
} IldvitStatus;

// Opaque model handle.
typedef struct IldvitModel IldvitModel;

// Classification of one recording. `label` is 0 for Healthy and 1 for
// ILD. Each class probability is an independent sigmoid output averaged
// over the classified segments, so the two need not sum to one.
typedef struct IldvitPrediction {
  uint32_t label;
  double p_healthy;
  double p_ild;
  uint32_t segments;
  uint32_t skipped_segments;
} IldvitPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint written by the `ildvit train` command.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum IldvitStatus ildvit_model_load(const char *path, struct IldvitModel **out);

// Randomly initialized model with `n_blocks` transformer blocks and
// otherwise default settings.
//
// # Safety
// `out` must be a valid pointer.
enum IldvitStatus ildvit_model_init_random(uint32_t n_blocks,
                                           uint64_t seed,
                                           struct IldvitModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from a loader of this library and not be used again.
void ildvit_model_free(struct IldvitModel *model);

// Trainable parameter count of a loaded model.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum IldvitStatus ildvit_model_parameter_count(const struct IldvitModel *model, uint64_t *out);

// Parameter count of the default architecture with `n_blocks` blocks.
//
// # Safety
// `out` must be a valid pointer.
enum IldvitStatus ildvit_parameter_count(uint32_t n_blocks, uint64_t *out);

// Classifies `len` samples in `[-1, 1]` recorded at 4000 Hz.
//
// # Safety
// `samples` must point to `len` readable doubles; `model` must be a live
// handle and `out` a valid pointer.
enum IldvitStatus ildvit_classify_samples(const struct IldvitModel *model,
                                          const double *samples,
                                          uintptr_t len,
                                          struct IldvitPrediction *out);

// Classifies a 16-bit mono 4000 Hz WAV file.
//
// # Safety
// `path` must be a NUL-terminated string; `model` must be a live handle
// and `out` a valid pointer.
enum IldvitStatus ildvit_classify_wav(const struct IldvitModel *model,
                                      const char *path,
                                      struct IldvitPrediction *out);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `cap > 0`). Returns the full message length
// including the terminator, or 0 when there is no error.
//
// # Safety
// `buf` must be writable for `cap` bytes, or null with `cap == 0`.
uintptr_t ildvit_last_error_message(char *buf, uintptr_t cap);

// Static, NUL-terminated name of a status code.
const char *ildvit_status_name(enum IldvitStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ILDVIT_H */
