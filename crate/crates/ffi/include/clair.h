#ifndef CLAIR_H
#define CLAIR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClairStatus {
  CLAIR_STATUS_OK = 0,
  CLAIR_STATUS_NULL_POINTER = 1,
  CLAIR_STATUS_INVALID_ARGUMENT = 2,
  CLAIR_STATUS_INSUFFICIENT_CLIENTS = 3,
  CLAIR_STATUS_DIMENSION_MISMATCH = 4,
  CLAIR_STATUS_NUMERIC_FAILURE = 5,
  CLAIR_STATUS_NOT_RUN = 6,
  CLAIR_STATUS_BUFFER_SIZE = 7,
  CLAIR_STATUS_PANIC = 8,
} ClairStatus;

/**
 * Opaque session handle.
 */
typedef struct ClairSession ClairSession;

/**
 * Pipeline parameters. Obtain defaults from [`clair_params_default`].
 */
typedef struct ClairParams {
  /**
   * `lambda_L = lambda_l_c1 / sqrt(K)`.
   */
  double lambda_l_c1;
  /**
   * `lambda_S = lambda_s_c2 / K^1.5`.
   */
  double lambda_s_c2;
  /**
   * Majority-vote fraction in `[0.5, 1)`.
   */
  double alpha;
  /**
   * Fixed vote threshold; any negative value selects the largest-gap rule.
   */
  double tau;
  size_t max_iters;
  double tol;
  /**
   * Shared row-space rank.
   */
  size_t rank;
} ClairParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Defaults matching the library: `c1 = 0.3`, `c2 = 1.0`, `alpha = 0.5`,
 * largest-gap threshold, 2000 iterations, tolerance `1e-9`, rank 2.
 */
struct ClairParams clair_params_default(void);

/**
 * Create a session holding `clients` matrices of shape `q x p`.
 *
 * # Safety
 * `weights` must point to `clients * q * p` readable doubles and `out` to a
 * writable handle slot.
 */
enum ClairStatus clair_session_new(size_t clients,
                                   size_t q,
                                   size_t p,
                                   const double *weights,
                                   struct ClairSession **out);

/**
 * Release a session. Null is accepted.
 *
 * # Safety
 * `session` must come from [`clair_session_new`] and not be used afterwards.
 */
void clair_session_free(struct ClairSession *session);

/**
 * Run decomposition, detection and refinement. `params` may be null for
 * defaults. A failed run clears earlier results.
 *
 * # Safety
 * `session` must be a live handle; `params` null or readable.
 */
enum ClairStatus clair_session_run(struct ClairSession *session, const struct ClairParams *params);

/**
 * # Safety
 * `session` must be a live handle; each output pointer null or writable.
 */
enum ClairStatus clair_session_dims(const struct ClairSession *session,
                                    size_t *clients,
                                    size_t *q,
                                    size_t *p);

/**
 * Write 1 for clients in the collaborative set and 0 otherwise. `len` must
 * equal `K`.
 *
 * # Safety
 * `session` must be a live handle and `out` point to `len` writable bytes.
 */
enum ClairStatus clair_session_collaborative_mask(const struct ClairSession *session,
                                                  uint8_t *out,
                                                  size_t len);

/**
 * Refined weights, client-major and row-major. Clients outside the set
 * receive their input weights. `len` must equal `K * q * p`.
 *
 * # Safety
 * `session` must be a live handle and `out` point to `len` writable doubles.
 */
enum ClairStatus clair_session_refined_weights(const struct ClairSession *session,
                                               double *out,
                                               size_t len);

/**
 * The estimated `p x p` row-space projector. `len` must equal `p * p`.
 *
 * # Safety
 * `session` must be a live handle and `out` point to `len` writable doubles.
 */
enum ClairStatus clair_session_projector(const struct ClairSession *session,
                                         double *out,
                                         size_t len);

/**
 * Threshold used by the vote, plus solver iteration count and convergence
 * flag. Any output pointer may be null.
 *
 * # Safety
 * `session` must be a live handle; each output pointer null or writable.
 */
enum ClairStatus clair_session_diagnostics(const struct ClairSession *session,
                                           double *tau,
                                           size_t *iterations,
                                           uint8_t *converged);

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *clair_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAIR_H */
