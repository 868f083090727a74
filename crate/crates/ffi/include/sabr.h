#ifndef SABR_H
#define SABR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum SabrStatus {
  SABR_STATUS_OK = 0,
  SABR_STATUS_NULL_ARGUMENT = 1,
  SABR_STATUS_INVALID_UTF8 = 2,
  SABR_STATUS_CONFIG = 3,
  SABR_STATUS_CONTRACT = 4,
  SABR_STATUS_DIMENSION = 5,
  SABR_STATUS_NUMERIC = 6,
  SABR_STATUS_GEOMETRY = 7,
  SABR_STATUS_GENERATION = 8,
  SABR_STATUS_FORMAT = 9,
  SABR_STATUS_INTEGRITY = 10,
  SABR_STATUS_IO = 11,
  SABR_STATUS_INDEX = 12,
  SABR_STATUS_BUFFER_TOO_SMALL = 13,
  SABR_STATUS_PANIC = 14,
} SabrStatus;

/**
 * Trained weights with optimizer and EMA state.
 */
typedef struct SabrCheckpoint SabrCheckpoint;

/**
 * A generated or loaded dataset.
 */
typedef struct SabrDataset SabrDataset;

/**
 * One sampled motion [frames × dim].
 */
typedef struct SabrMotion SabrMotion;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sabr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sabr_version(void);

/**
 * Generates `count` records with `seed`. `config_json` holds the CLI
 * configuration schema and may be null for the defaults.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be valid
 * for writes.
 */
enum SabrStatus sabr_dataset_generate(const char *config_json,
                                      uint64_t seed,
                                      size_t count,
                                      struct SabrDataset **out);

/**
 * Reads and verifies a dataset directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum SabrStatus sabr_dataset_open(const char *dir, struct SabrDataset **out);

/**
 * # Safety
 * `ds` must come from this library; `dir` must be a NUL-terminated string.
 */
enum SabrStatus sabr_dataset_write(const struct SabrDataset *ds, const char *dir);

/**
 * # Safety
 * `ds` must come from this library; `out` must be valid for writes.
 */
enum SabrStatus sabr_dataset_len(const struct SabrDataset *ds, size_t *out);

/**
 * Frame count of record `index`.
 *
 * # Safety
 * `ds` must come from this library; `out` must be valid for writes.
 */
enum SabrStatus sabr_dataset_record_frames(const struct SabrDataset *ds, size_t index, size_t *out);

/**
 * # Safety
 * `ds` must be null or come from this library, and is invalid afterwards.
 */
void sabr_dataset_free(struct SabrDataset *ds);

/**
 * Trains on the training split. `out_dir` may be null to keep everything in
 * memory; otherwise checkpoints and the loss log go there.
 *
 * # Safety
 * `ds` must come from this library; strings must be null or NUL-terminated;
 * `out` must be valid for writes.
 */
enum SabrStatus sabr_train(const struct SabrDataset *ds,
                           const char *config_json,
                           const char *out_dir,
                           struct SabrCheckpoint **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum SabrStatus sabr_checkpoint_load(const char *path, struct SabrCheckpoint **out);

/**
 * # Safety
 * `ck` must come from this library; `path` must be a NUL-terminated string.
 */
enum SabrStatus sabr_checkpoint_save(const struct SabrCheckpoint *ck, const char *path);

/**
 * Optimizer steps the checkpoint has completed.
 *
 * # Safety
 * `ck` must come from this library; `out` must be valid for writes.
 */
enum SabrStatus sabr_checkpoint_step(const struct SabrCheckpoint *ck, uint64_t *out);

/**
 * # Safety
 * `ck` must be null or come from this library, and is invalid afterwards.
 */
void sabr_checkpoint_free(struct SabrCheckpoint *ck);

/**
 * Samples record `record` with the EMA weights over `steps` respaced steps.
 *
 * # Safety
 * Handles must come from this library; `out` must be valid for writes.
 */
enum SabrStatus sabr_sample(const struct SabrCheckpoint *ck,
                            const struct SabrDataset *ds,
                            size_t record,
                            size_t steps,
                            uint64_t seed,
                            struct SabrMotion **out);

/**
 * # Safety
 * `m` must come from this library; `frames` and `dim` must be valid for
 * writes.
 */
enum SabrStatus sabr_motion_shape(const struct SabrMotion *m, size_t *frames, size_t *dim);

/**
 * Copies the row-major motion into `buf`, which must hold frames × dim
 * values.
 *
 * # Safety
 * `m` must come from this library; `buf` must be valid for `len` writes.
 */
enum SabrStatus sabr_motion_copy(const struct SabrMotion *m, double *buf, size_t len);

/**
 * # Safety
 * `m` must come from this library; `path` must be a NUL-terminated string.
 */
enum SabrStatus sabr_motion_save(const struct SabrMotion *m, const char *path);

/**
 * # Safety
 * `m` must be null or come from this library, and is invalid afterwards.
 */
void sabr_motion_free(struct SabrMotion *m);

/**
 * Evaluates the held-out split (every record when it is empty) and returns
 * the metrics report as JSON, to be released with [`sabr_string_free`].
 * `eval_json` may be null for the default evaluation settings.
 *
 * # Safety
 * Handles must come from this library; `eval_json` must be null or
 * NUL-terminated; `out` must be valid for writes.
 */
enum SabrStatus sabr_evaluate(const struct SabrCheckpoint *ck,
                              const struct SabrDataset *ds,
                              const char *eval_json,
                              char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void sabr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SABR_H */
