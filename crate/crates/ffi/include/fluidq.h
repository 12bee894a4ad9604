#ifndef FLUIDQ_H
#define FLUIDQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FluidqStatus {
  FLUIDQ_STATUS_OK = 0,
  /**
   * Malformed model, bad argument or unreadable input.
   */
  FLUIDQ_STATUS_INVALID_INPUT = 1,
  /**
   * Solver failed to converge or hit a singular system.
   */
  FLUIDQ_STATUS_NUMERICAL = 2,
  /**
   * The operation is undefined for the model's drift regime.
   */
  FLUIDQ_STATUS_REGIME = 3,
  FLUIDQ_STATUS_NULL_POINTER = 4,
  FLUIDQ_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  FLUIDQ_STATUS_PANIC = 6,
} FluidqStatus;

typedef enum FluidqRegime {
  FLUIDQ_REGIME_POSITIVE_RECURRENT = 0,
  FLUIDQ_REGIME_NULL_RECURRENT = 1,
  FLUIDQ_REGIME_TRANSIENT = 2,
} FluidqRegime;

typedef enum FluidqAlgorithm {
  FLUIDQ_ALGORITHM_NEWTON = 0,
  FLUIDQ_ALGORITHM_FUNCTIONAL = 1,
} FluidqAlgorithm;

/**
 * Validated model, kept as its phase partition and censored generator.
 */
typedef struct FluidqModel FluidqModel;

/**
 * Solved first-return system for one model.
 */
typedef struct FluidqSolution FluidqSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Thread-local message for the last failed call, or null. Valid until the
 * next failing call on the same thread.
 */
const char *fluidq_last_error(void);

/**
 * Builds a model from a row-major `m×m` generator and `m` rates.
 *
 * # Safety
 * `generator` must point to `m*m` doubles, `rates` to `m` doubles and
 * `out` to writable storage for one pointer.
 */
enum FluidqStatus fluidq_model_new(const double *generator,
                                   const double *rates,
                                   size_t m,
                                   struct FluidqModel **out);

/**
 * Builds a model from a JSON model document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum FluidqStatus fluidq_model_from_json(const char *json, struct FluidqModel **out);

/**
 * # Safety
 * `model` must come from a `fluidq_model_*` constructor or be null.
 */
void fluidq_model_free(struct FluidqModel *model);

/**
 * Phase counts: total, up, down and zero-rate. Any output may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum FluidqStatus fluidq_model_dims(const struct FluidqModel *model,
                                    size_t *m,
                                    size_t *m_up,
                                    size_t *m_down,
                                    size_t *m_zero);

/**
 * Mean drift and its regime.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum FluidqStatus fluidq_model_drift(const struct FluidqModel *model,
                                     double *drift,
                                     enum FluidqRegime *regime);

/**
 * Solves for the first-return matrices. `tol <= 0` and `max_iter == 0`
 * select the defaults.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum FluidqStatus fluidq_solve(const struct FluidqModel *model,
                               enum FluidqAlgorithm algorithm,
                               double tol,
                               size_t max_iter,
                               struct FluidqSolution **out);

/**
 * # Safety
 * `solution` must come from `fluidq_solve` or be null.
 */
void fluidq_solution_free(struct FluidqSolution *solution);

/**
 * Iteration counts for the primal and dual problems and the larger residual.
 *
 * # Safety
 * `solution` must be a live handle; non-null outputs must be writable.
 */
enum FluidqStatus fluidq_solution_stats(const struct FluidqSolution *solution,
                                        size_t *iterations,
                                        size_t *dual_iterations,
                                        double *residual);

/**
 * Writes the up-by-down first-return matrix (`m_up*m_down` values).
 *
 * # Safety
 * `solution` must be a live handle and `out` hold `capacity` doubles.
 */
enum FluidqStatus fluidq_solution_psi(const struct FluidqSolution *solution,
                                      double *out,
                                      size_t capacity);

/**
 * Writes the down-by-up first-return matrix of the reflected level.
 *
 * # Safety
 * `solution` must be a live handle and `out` hold `capacity` doubles.
 */
enum FluidqStatus fluidq_solution_psi_hat(const struct FluidqSolution *solution,
                                          double *out,
                                          size_t capacity);

/**
 * Stationary `P[Y <= x, phase = i]` for all `m` phases in model order.
 *
 * # Safety
 * `solution` must be a live handle and `out` hold `capacity` doubles.
 */
enum FluidqStatus fluidq_stationary_cdf(const struct FluidqSolution *solution,
                                        double x,
                                        double *out,
                                        size_t capacity);

/**
 * Exit-phase probabilities from `(-a, b)`: `m` rows in model order, first
 * the `m_up` upper-exit columns then the `m_down` lower-exit columns.
 *
 * # Safety
 * `solution` must be a live handle and `out` hold `capacity` doubles.
 */
enum FluidqStatus fluidq_escape(const struct FluidqSolution *solution,
                                double a,
                                double b,
                                double *out,
                                size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLUIDQ_H */
