#ifndef TWOPOINT_H
#define TWOPOINT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_ARGUMENT = 2,
  TP_STATUS_DIMENSION = 3,
  TP_STATUS_NUMERICAL = 4,
  TP_STATUS_SOLVER = 5,
  TP_STATUS_UNAVAILABLE = 6,
  TP_STATUS_PANIC = 7,
} TpStatus;

/**
 * A simulation model built from the builtin registry.
 */
typedef struct TpModel TpModel;

/**
 * A one-dimensional Poisson solution `A g = f - ν(f)`.
 */
typedef struct TpPoisson TpPoisson;

/**
 * Summary of a replicated estimator study at its single rung.
 */
typedef struct TpStudySummary {
  double mean_err;
  /**
   * Empirical variance of the normalized error.
   */
  double var_norm_err;
  double var_norm_se;
  /**
   * NaN when no Poisson handle was supplied.
   */
  double predicted_variance;
  size_t used_replications;
  size_t diverged;
} TpStudySummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *tp_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library from the same thread.
 */
const char *tp_last_error(void);

/**
 * Build a builtin model by name. `keys`/`values` hold `n_params` parameter
 * overrides; missing parameters take their defaults.
 *
 * # Safety
 * `name` and each key must be NUL-terminated strings; `keys` and `values`
 * must hold `n_params` entries; `out` must be writable.
 */
enum TpStatus tp_model_new(const char *name,
                           const char *const *keys,
                           const double *values,
                           size_t n_params,
                           struct TpModel **out);

/**
 * # Safety
 * `model` must come from [`tp_model_new`] and not be used afterwards.
 */
void tp_model_free(struct TpModel *model);

/**
 * State dimension `d` and noise dimension `q`.
 *
 * # Safety
 * `model` must be a live handle; `d` and `q` must be writable.
 */
enum TpStatus tp_model_dims(const struct TpModel *model, size_t *d, size_t *q);

/**
 * Drift `b(x)` into `out` (`d` entries).
 *
 * # Safety
 * `x` and `out` must hold `d` entries.
 */
enum TpStatus tp_model_drift(const struct TpModel *model, const double *x, double *out);

/**
 * Diffusion `σ(x)` into `out`, row-major `d × q`.
 *
 * # Safety
 * `x` must hold `d` entries and `out` `d * q`.
 */
enum TpStatus tp_model_diffusion(const struct TpModel *model, const double *x, double *out);

/**
 * NILS exponent `Λ_S(x, y)`. `s` is a row-major `d × d` metric, or null for
 * the identity.
 *
 * # Safety
 * `x`, `y` must hold `d` entries, `s` (if non-null) `d * d`.
 */
enum TpStatus tp_nils(const struct TpModel *model,
                      const double *s,
                      const double *x,
                      const double *y,
                      double *out);

/**
 * Solve the Poisson equation for `f(x) = x^power` on `[lo, hi]` for a
 * one-dimensional model.
 *
 * # Safety
 * `model` must be live; `out` must be writable.
 */
enum TpStatus tp_poisson_new(const struct TpModel *model,
                             uint32_t power,
                             double lo,
                             double hi,
                             size_t grid,
                             struct TpPoisson **out);

/**
 * # Safety
 * `poisson` must come from [`tp_poisson_new`] and not be used afterwards.
 */
void tp_poisson_free(struct TpPoisson *poisson);

/**
 * `ν(f)` and the largest generator residual of the solution.
 *
 * # Safety
 * `poisson` must be live; both outputs must be writable.
 */
enum TpStatus tp_poisson_summary(const struct TpPoisson *poisson,
                                 double *nu_f,
                                 double *max_residual);

/**
 * `g^{(k)}(x)`; `k = 0` is `g` itself.
 *
 * # Safety
 * `poisson` must be live; `out` must be writable.
 */
enum TpStatus tp_poisson_derivative(const struct TpPoisson *poisson,
                                    double x,
                                    size_t k,
                                    double *out);

/**
 * Replicated Richardson-Romberg study of `f(x) = x₀^power` at horizon `n`
 * with scalar correlation `rho`. `rr = 0` runs the crude scheme instead.
 * With a non-null `poisson` (one-dimensional models) the asymptotic
 * variance is predicted from `σ g'`.
 *
 * # Safety
 * `model` must be live, `poisson` live or null, `out` writable.
 */
enum TpStatus tp_rr_study(const struct TpModel *model,
                          uint32_t power,
                          double nu_f,
                          int32_t rr,
                          double mu,
                          uint64_t n,
                          size_t replications,
                          double rho,
                          uint64_t seed,
                          const struct TpPoisson *poisson,
                          struct TpStudySummary *out);

/**
 * Maximal coupling value `sup_π Σ c_ij π_ij` over couplings of the discrete
 * measure with itself. `cost` is row-major `n × n`; `weights` may be null
 * for uniform weights.
 *
 * # Safety
 * `cost` must hold `n * n` entries, `weights` (if non-null) `n`.
 */
enum TpStatus tp_max_coupling_value(const double *cost,
                                    const double *weights,
                                    size_t n,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOPOINT_H */
