#ifndef LIGHTSBB_H
#define LIGHTSBB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum SbbStatus {
  SBB_STATUS_OK = 0,
  SBB_STATUS_NULL_POINTER = 1,
  SBB_STATUS_INVALID_ARGUMENT = 2,
  SBB_STATUS_DIMENSION_MISMATCH = 3,
  SBB_STATUS_NON_FINITE = 4,
  SBB_STATUS_IO = 5,
  SBB_STATUS_PARSE = 6,
  SBB_STATUS_DIVERGED = 7,
  SBB_STATUS_PANIC = 8,
} SbbStatus;

/**
 * Opaque trained model.
 */
typedef struct SbbModel SbbModel;

/**
 * Opaque Gaussian-mixture potential.
 */
typedef struct SbbPotential SbbPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *sbb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sbb_version(void);

/**
 * Parses a potential from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SbbStatus sbb_potential_from_json(const char *json, struct SbbPotential **out);

/**
 * Serializes a potential to JSON. Call with `buf = NULL` to query the size;
 * `*len` receives the byte count including the terminating NUL.
 *
 * # Safety
 * `p` must come from this library; `buf` must hold `cap` bytes.
 */
enum SbbStatus sbb_potential_to_json(const struct SbbPotential *p,
                                     char *buf,
                                     size_t cap,
                                     size_t *len);

/**
 * # Safety
 * `p` must come from this library or be null; it must not be used afterwards.
 */
void sbb_potential_free(struct SbbPotential *p);

/**
 * Data dimension, or 0 for a null handle.
 *
 * # Safety
 * `p` must come from this library or be null.
 */
size_t sbb_potential_dim(const struct SbbPotential *p);

/**
 * Number of mixture components, or 0 for a null handle.
 *
 * # Safety
 * `p` must come from this library or be null.
 */
size_t sbb_potential_components(const struct SbbPotential *p);

/**
 * Drift `s(t, y)` into `out[dim]`; requires `0 ≤ t < T`.
 *
 * # Safety
 * `y` and `out` must hold `dim` values.
 */
enum SbbStatus sbb_potential_drift(const struct SbbPotential *p,
                                   double t,
                                   const double *y,
                                   size_t dim,
                                   double *out);

/**
 * `log h_t(y)` up to a `y`-independent constant.
 *
 * # Safety
 * `y` must hold `dim` values; `out` must be valid.
 */
enum SbbStatus sbb_potential_log_h(const struct SbbPotential *p,
                                   double t,
                                   const double *y,
                                   size_t dim,
                                   double *out);

/**
 * One draw from the conditional coupling given `x0`.
 *
 * # Safety
 * `x0` and `out` must hold `dim` values.
 */
enum SbbStatus sbb_potential_sample_conditional(const struct SbbPotential *p,
                                                const double *x0,
                                                size_t dim,
                                                uint64_t seed,
                                                double *out);

/**
 * Loads a model saved by the trainer or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SbbStatus sbb_model_load(const char *path, struct SbbModel **out);

/**
 * # Safety
 * `m` must come from this library; `path` must be a NUL-terminated string.
 */
enum SbbStatus sbb_model_save(const struct SbbModel *m, const char *path);

/**
 * # Safety
 * `m` must come from this library or be null; it must not be used afterwards.
 */
void sbb_model_free(struct SbbModel *m);

/**
 * Data dimension, or 0 for a null handle.
 *
 * # Safety
 * `m` must come from this library or be null.
 */
size_t sbb_model_dim(const struct SbbModel *m);

/**
 * Copy of the model's potential as a new handle.
 *
 * # Safety
 * `m` must come from this library and `out` be valid.
 */
enum SbbStatus sbb_model_potential(const struct SbbModel *m, struct SbbPotential **out);

/**
 * Maps `n` source points to target samples without simulating the SDE.
 *
 * # Safety
 * `x0` and `out` must hold `n * dim` values.
 */
enum SbbStatus sbb_model_infer(const struct SbbModel *m,
                               const double *x0,
                               size_t n,
                               size_t dim,
                               uint64_t seed,
                               double *out);

/**
 * Trains a model. `config_json` holds the trainer settings (at least
 * `beta` and `epsilon`; β = ∞ is `"inf"` or `null`).
 *
 * # Safety
 * `source` must hold `n_source * dim` values, `target` `n_target * dim`
 * values; `out` must be valid.
 */
enum SbbStatus sbb_train(const char *config_json,
                         const double *source,
                         size_t n_source,
                         const double *target,
                         size_t n_target,
                         size_t dim,
                         struct SbbModel **out);

/**
 * Exact empirical W₂ between two sets of `n` points.
 *
 * # Safety
 * `a` and `b` must hold `n * dim` values; `out` must be valid.
 */
enum SbbStatus sbb_w2_exact(const double *a, const double *b, size_t n, size_t dim, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIGHTSBB_H */
