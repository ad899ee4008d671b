#ifndef TSB_H
#define TSB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a C API call.
 */
typedef enum TsbStatus {
  TSB_STATUS_OK = 0,
  TSB_STATUS_NULL_POINTER = 1,
  TSB_STATUS_INVALID_UTF8 = 2,
  TSB_STATUS_INVALID_CONFIG = 3,
  TSB_STATUS_COMPUTATION_FAILED = 4,
  TSB_STATUS_BUFFER_TOO_SMALL = 5,
  TSB_STATUS_PANIC = 6,
} TsbStatus;

/**
 * Finished chain together with the experiment it was run on.
 */
typedef struct TsbChain TsbChain;

/**
 * Prior built for a fixed design size.
 */
typedef struct TsbPrior TsbPrior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on this thread.
 */
const char *tsb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tsb_version(void);

/**
 * Release a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tsb_string_free(char *s);

/**
 * Build a prior from its JSON configuration for design size `n`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` writable.
 */
enum TsbStatus tsb_prior_new(const char *config_json, size_t n, struct TsbPrior **out);

/**
 * # Safety
 * `prior` must come from [`tsb_prior_new`] and not have been freed.
 */
void tsb_prior_free(struct TsbPrior *prior);

/**
 * Model-index weights as JSON: `{n, indices, n_delta_sq, log_weights, weights}`.
 *
 * # Safety
 * `prior` must be a live handle and `out` writable.
 */
enum TsbStatus tsb_prior_weights_json(const struct TsbPrior *prior, char **out);

/**
 * Run the sampler on a regression dataset described by `request_json`:
 * `{experiment, design?, prior, sampler, y}`.
 *
 * # Safety
 * `request_json` must be a NUL-terminated string and `out` writable.
 */
enum TsbStatus tsb_fit_json(const char *request_json, struct TsbChain **out);

/**
 * # Safety
 * `chain` must come from [`tsb_fit_json`] and not have been freed.
 */
void tsb_chain_free(struct TsbChain *chain);

/**
 * Number of retained draws, or 0 for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
size_t tsb_chain_draws(const struct TsbChain *chain);

/**
 * Write the posterior-mean fit into `buf`, which holds `len` values.
 * `written` receives the number of fitted values, also when the buffer is
 * too small.
 *
 * # Safety
 * `chain` must be a live handle, `buf` valid for `len` writes and
 * `written` writable.
 */
enum TsbStatus tsb_chain_posterior_mean(const struct TsbChain *chain,
                                        double *buf,
                                        size_t len,
                                        size_t *written);

/**
 * Chain summary as JSON: model-index histogram, acceptance rates and the
 * truncation warning.
 *
 * # Safety
 * `chain` must be a live handle and `out` writable.
 */
enum TsbStatus tsb_chain_summary_json(const struct TsbChain *chain, char **out);

/**
 * Run a rate sweep from its JSON configuration and return the contraction
 * report as JSON.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` writable.
 */
enum TsbStatus tsb_sweep_json(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSB_H */
