#ifndef SSM_PNC_H
#define SSM_PNC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsmStatus {
  SSM_STATUS_OK = 0,
  SSM_STATUS_NULL_POINTER = 1,
  SSM_STATUS_INVALID_ARGUMENT = 2,
  SSM_STATUS_LENGTH_MISMATCH = 3,
  SSM_STATUS_NOT_POSITIVE_DEFINITE = 4,
  SSM_STATUS_NO_ROOT = 5,
  SSM_STATUS_DEGENERATE_SCALE = 6,
  SSM_STATUS_NUMERICAL = 7,
  SSM_STATUS_PANIC = 8,
} SsmStatus;

typedef enum SsmScheme {
  SSM_SCHEME_CENTERED = 0,
  SSM_SCHEME_NONCENTERED = 1,
  SSM_SCHEME_PARTIAL = 2,
  SSM_SCHEME_APPROX = 3,
} SsmScheme;

/*
 The outcome of one EM fit.
 */
typedef struct SsmFit SsmFit;

/*
 An observed series.
 */
typedef struct SsmSeries SsmSeries;

/*
 Model parameters `(μ, σ_η², σ_ε², φ)`.
 */
typedef struct SsmParams {
  double mu;
  double sigma_eta_sq;
  double sigma_eps_sq;
  double phi;
} SsmParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Static description of a status code.
 */
const char *ssm_status_string(enum SsmStatus status);

/*
 Copies the calling thread's last error message into `buf` (truncated,
 always NUL-terminated when `len > 0`) and returns the length the full
 message needs including the terminator; 0 when there is no error.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t ssm_last_error_message(char *buf, size_t len);

/*
 Copies `len` observations into a new series.

 # Safety
 `values` must point to `len` readable doubles; `out` must be writable.
 */
enum SsmStatus ssm_series_new(const double *values, size_t len, struct SsmSeries **out);

/*
 Simulates `n` observations from the stationary model with a ChaCha8
 stream seeded by `seed`.

 # Safety
 `params` must point to a valid [`SsmParams`]; `out` must be writable.
 */
enum SsmStatus ssm_series_simulate(const struct SsmParams *params,
                                   size_t n,
                                   uint64_t seed,
                                   struct SsmSeries **out);

/*
 Number of observations; 0 for a null handle.

 # Safety
 `series` must be null or a live handle.
 */
size_t ssm_series_len(const struct SsmSeries *series);

/*
 Copies the observations into `out`, which must hold exactly `len` values.

 # Safety
 `series` must be a live handle and `out` must point to `len` writable doubles.
 */
enum SsmStatus ssm_series_copy_values(const struct SsmSeries *series, double *out, size_t len);

/*
 # Safety
 `series` must be null or a handle not yet freed.
 */
void ssm_series_free(struct SsmSeries *series);

/*
 Exact Gaussian log-likelihood of the series under `params`.

 # Safety
 Pointers must be valid; `out` must be writable.
 */
enum SsmStatus ssm_log_likelihood(const struct SsmParams *params,
                                  const struct SsmSeries *series,
                                  double *out);

/*
 Optimal location weights for a series of length `n`, written to `out_w`.

 # Safety
 `params` must be valid and `out_w` must point to `n` writable doubles.
 */
enum SsmStatus ssm_w_opt_location(const struct SsmParams *params, size_t n, double *out_w);

/*
 Convergence rate of the location EM for weights `w` of length `n`.

 # Safety
 `params` must be valid, `w` must point to `n` readable doubles and
 `out` must be writable.
 */
enum SsmStatus ssm_rate_location(const struct SsmParams *params,
                                 const double *w,
                                 size_t n,
                                 double *out);

/*
 EM for μ with the other parameters fixed at `known`; `scheme` is an
 [`SsmScheme`] value.

 # Safety
 Pointers must be valid; `out` receives a handle to free with [`ssm_fit_free`].
 */
enum SsmStatus ssm_fit_location(const struct SsmSeries *series,
                                double init_mu,
                                const struct SsmParams *known,
                                int scheme,
                                double tol,
                                size_t max_iter,
                                struct SsmFit **out);

/*
 EM for σ_η² with the other parameters fixed at `known`; `scheme` is an
 [`SsmScheme`] value.

 # Safety
 Pointers must be valid; `out` receives a handle to free with [`ssm_fit_free`].
 */
enum SsmStatus ssm_fit_scale(const struct SsmSeries *series,
                             double init_sigma_eta_sq,
                             const struct SsmParams *known,
                             int scheme,
                             double tol,
                             size_t max_iter,
                             struct SsmFit **out);

/*
 Three-cycle ECM for all parameters; `cycle2` and `scale` are
 [`SsmScheme`] values. A null `init` starts from the moment-based default.

 # Safety
 `series` must be live, `init` null or valid; `out` receives a handle to
 free with [`ssm_fit_free`].
 */
enum SsmStatus ssm_fit_all(const struct SsmSeries *series,
                           const struct SsmParams *init,
                           int cycle2,
                           int scale,
                           double tol,
                           size_t max_iter,
                           struct SsmFit **out);

/*
 Final parameter estimates.

 # Safety
 `fit` must be a live handle and `out` writable.
 */
enum SsmStatus ssm_fit_params(const struct SsmFit *fit, struct SsmParams *out);

/*
 Iterations performed; 0 for a null handle.

 # Safety
 `fit` must be null or a live handle.
 */
size_t ssm_fit_iterations(const struct SsmFit *fit);

/*
 Final log-likelihood; NaN for a null handle.

 # Safety
 `fit` must be null or a live handle.
 */
double ssm_fit_loglik(const struct SsmFit *fit);

/*
 Whether the tolerance rule, rather than the iteration cap, stopped the fit.

 # Safety
 `fit` must be null or a live handle.
 */
bool ssm_fit_converged(const struct SsmFit *fit);

/*
 Length of the log-likelihood trajectory, starting point included.

 # Safety
 `fit` must be null or a live handle.
 */
size_t ssm_fit_trajectory_len(const struct SsmFit *fit);

/*
 Copies the log-likelihood trajectory; `len` must equal
 [`ssm_fit_trajectory_len`].

 # Safety
 `fit` must be a live handle and `out` must point to `len` writable doubles.
 */
enum SsmStatus ssm_fit_copy_logliks(const struct SsmFit *fit, double *out, size_t len);

/*
 # Safety
 `fit` must be null or a handle not yet freed.
 */
void ssm_fit_free(struct SsmFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSM_PNC_H */
