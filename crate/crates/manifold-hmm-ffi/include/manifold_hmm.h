#ifndef MANIFOLD_HMM_H
#define MANIFOLD_HMM_H

/* Generated by cbindgen from manifold-hmm-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MhmmStatus {
  MHMM_STATUS_OK = 0,
  MHMM_STATUS_NULL_POINTER = 1,
  MHMM_STATUS_INVALID_UTF8 = 2,
  MHMM_STATUS_INVALID_ARGUMENT = 3,
  MHMM_STATUS_NUMERICAL_FAILURE = 4,
  MHMM_STATUS_IO_FAILURE = 5,
  MHMM_STATUS_UNSUPPORTED = 6,
} MhmmStatus;

/**
 * Opaque handle around a simulated (or loaded) chain.
 */
typedef struct MhmmChain MhmmChain;

/**
 * Opaque handle around one fitted run: scores, aligned estimates, and the
 * decoded state sequence.
 */
typedef struct MhmmFit MhmmFit;

/**
 * Opaque handle around a validated parameter set.
 */
typedef struct MhmmParams MhmmParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread; never NULL, valid until the next
 * failing call on the same thread.
 */
const char *mhmm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mhmm_version(void);

/**
 * Releases a string returned through an out-pointer.
 *
 * # Safety
 * `s` must be a pointer previously returned by this library through a
 * `char**` out-parameter, not yet freed, or NULL.
 */
void mhmm_string_free(char *s);

/**
 * Parses a parameter set from its JSON document (the same schema the CLI
 * uses) and returns an owned handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MhmmStatus mhmm_params_from_json(const char *json, struct MhmmParams **out);

/**
 * Serializes a parameter set back to JSON; release the string with
 * [`mhmm_string_free`].
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_params_to_json(const struct MhmmParams *params, char **out);

/**
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_params_n_states(const struct MhmmParams *params, size_t *out);

/**
 * # Safety
 * `params` must be a handle from this library, not yet freed, or NULL.
 */
void mhmm_params_free(struct MhmmParams *params);

/**
 * Simulates a chain of `length` observations; deterministic per seed.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_simulate(const struct MhmmParams *params,
                              size_t length,
                              uint64_t seed,
                              struct MhmmChain **out);

/**
 * # Safety
 * `chain` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_chain_len(const struct MhmmChain *chain, size_t *out);

/**
 * Number of coordinates per observation: 2 on the disk, d·d on SPD(d).
 *
 * # Safety
 * `chain` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_chain_point_dim(const struct MhmmChain *chain, size_t *out);

/**
 * Hidden state (1-based) at position `t` (0-based).
 *
 * # Safety
 * `chain` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_chain_state(const struct MhmmChain *chain, size_t t, size_t *out);

/**
 * Writes the coordinates of observation `t` into `buf` (disk: re, im;
 * SPD: row-major entries). `buf_len` must be at least the value reported
 * by [`mhmm_chain_point_dim`].
 *
 * # Safety
 * `chain` must be a live handle and `buf` must point to `buf_len`
 * writable doubles.
 */
enum MhmmStatus mhmm_chain_point(const struct MhmmChain *chain,
                                 size_t t,
                                 double *buf,
                                 size_t buf_len);

/**
 * # Safety
 * `chain` must be a handle from this library, not yet freed, or NULL.
 */
void mhmm_chain_free(struct MhmmChain *chain);

/**
 * Hyperbolic distance between two Poincaré-disk points.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MhmmStatus mhmm_disk_distance(double re1, double im1, double re2, double im2, double *out);

/**
 * Affine-invariant distance between two SPD matrices given as row-major
 * `dim`×`dim` buffers.
 *
 * # Safety
 * `x` and `y` must point to `dim*dim` readable doubles; `out` must be a
 * valid pointer.
 */
enum MhmmStatus mhmm_spd_distance(size_t dim, const double *x, const double *y, double *out);

/**
 * Runs the full pipeline on a chain: K-means initialization on the first
 * `delta` observations, online fine-tuning on the rest, filtered decoding
 * and scoring against `reference`. Pass `step_exponent <= 0` for the
 * default (0.5).
 *
 * # Safety
 * `chain` and `reference` must be live handles and `out` a valid pointer.
 */
enum MhmmStatus mhmm_fit(const struct MhmmChain *chain,
                         const struct MhmmParams *reference,
                         size_t delta,
                         uint64_t seed,
                         double step_exponent,
                         struct MhmmFit **out);

/**
 * # Safety
 * `fit` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_fit_accuracy(const struct MhmmFit *fit, double *out);

/**
 * # Safety
 * `fit` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_fit_transition_rmse(const struct MhmmFit *fit, double *out);

/**
 * Length of the decoded state sequence.
 *
 * # Safety
 * `fit` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_fit_decoded_len(const struct MhmmFit *fit, size_t *out);

/**
 * Copies the decoded (1-based) states into `buf`.
 *
 * # Safety
 * `fit` must be a live handle; `buf` must point to `buf_len` writable
 * `size_t`s.
 */
enum MhmmStatus mhmm_fit_decoded(const struct MhmmFit *fit, size_t *buf, size_t buf_len);

/**
 * The full run record (aligned transition matrix, centers, sigmas,
 * deltas, timings) as a JSON document; release with [`mhmm_string_free`].
 *
 * # Safety
 * `fit` must be a live handle and `out` a valid pointer.
 */
enum MhmmStatus mhmm_fit_record_json(const struct MhmmFit *fit, char **out);

/**
 * # Safety
 * `fit` must be a handle from this library, not yet freed, or NULL.
 */
void mhmm_fit_free(struct MhmmFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANIFOLD_HMM_H */
