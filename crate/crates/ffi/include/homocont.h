#ifndef HOMOCONT_H
#define HOMOCONT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HcConfigFormat {
  HC_CONFIG_FORMAT_JSON = 0,
  HC_CONFIG_FORMAT_TOML = 1,
} HcConfigFormat;

// Final state of a continuation run.
typedef enum HcOutcome {
  HC_OUTCOME_RECONNECT = 0,
  HC_OUTCOME_UNBOUNDED = 1,
  HC_OUTCOME_HIT_OMEGA_BOUNDARY = 2,
  HC_OUTCOME_HIT_LAMBDA_BOUNDARY = 3,
  HC_OUTCOME_BUDGET_EXHAUSTED = 4,
} HcOutcome;

// Status codes returned by all fallible functions.
typedef enum HcStatus {
  HC_STATUS_OK = 0,
  HC_STATUS_NULL_POINTER = 1,
  HC_STATUS_INVALID_ARGUMENT = 2,
  HC_STATUS_UNKNOWN_MODEL = 3,
  HC_STATUS_OUT_OF_RANGE = 4,
  HC_STATUS_NON_CONVERGENCE = 5,
  HC_STATUS_NON_HYPERBOLIC = 6,
  HC_STATUS_NO_DICHOTOMY = 7,
  HC_STATUS_HYPOTHESIS = 8,
  HC_STATUS_NUMERICAL = 9,
  HC_STATUS_PARSE = 10,
  HC_STATUS_PANIC = 11,
} HcStatus;

// One continuation branch.
typedef struct HcBranch HcBranch;

// A model `x_{t+1} = f_t(x_t, λ)` with its reference solution.
typedef struct HcModel HcModel;

// A truncated homoclinic solution at a fixed parameter.
typedef struct HcSolution HcSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hc_version(void);

// Message of the last failure on this thread; valid until the next call that fails.
const char *hc_last_error(void);

// Built-in model with default parameters.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum HcStatus hc_model_builtin(const char *name, struct HcModel **out);

// Model from a configuration document (`{"model": ..., parameters...}`).
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum HcStatus hc_model_from_config(const char *text,
                                   enum HcConfigFormat format,
                                   struct HcModel **out);

// # Safety
// `model` must come from this library or be null.
void hc_model_free(struct HcModel *model);

// # Safety
// `model` must be a live handle; `dim` and `lambda_star` may be null.
enum HcStatus hc_model_info(const struct HcModel *model, size_t *dim, double *lambda_star);

// Newton solve at `lambda` from the reference solution on at least `[-half_width, half_width]`.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum HcStatus hc_solve(const struct HcModel *model,
                       double lambda,
                       int64_t half_width,
                       struct HcSolution **out);

// # Safety
// `solution` must come from this library or be null.
void hc_solution_free(struct HcSolution *solution);

// Window bounds, dimension, parameter and residual sup-norm; any output may be null.
//
// # Safety
// `solution` must be a live handle.
enum HcStatus hc_solution_info(const struct HcSolution *solution,
                               int64_t *t_minus,
                               int64_t *t_plus,
                               size_t *dim,
                               double *lambda,
                               double *residual);

// Copies `φ_t` into `buf` (length `len >= dim`); zero outside the window.
//
// # Safety
// `solution` must be a live handle and `buf` valid for `len` writes.
enum HcStatus hc_solution_value(const struct HcSolution *solution,
                                int64_t t,
                                double *buf,
                                size_t len);

// Fredholm index of the linearization along the solution at `lambda`.
//
// # Safety
// `model` must be a live handle and `index` a valid pointer.
enum HcStatus hc_fredholm_index(const struct HcModel *model,
                                double lambda,
                                int64_t half_width,
                                int64_t *index);

// Continues the reference solution in direction `+1` or `-1` with `λ ∈ [lambda_min, lambda_max]`
// and steplength `step` (default settings otherwise).
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum HcStatus hc_continue(const struct HcModel *model,
                          int direction,
                          double lambda_min,
                          double lambda_max,
                          double step,
                          struct HcBranch **out);

// # Safety
// `branch` must come from this library or be null.
void hc_branch_free(struct HcBranch *branch);

// Number of accepted points and the outcome; either output may be null.
//
// # Safety
// `branch` must be a live handle.
enum HcStatus hc_branch_info(const struct HcBranch *branch,
                             size_t *len,
                             enum HcOutcome *outcome,
                             size_t *folds);

// Parameter, sup-norm and arclength of point `i`; outputs may be null.
//
// # Safety
// `branch` must be a live handle.
enum HcStatus hc_branch_point(const struct HcBranch *branch,
                              size_t i,
                              double *lambda,
                              double *sup_norm,
                              double *s);

// Solution at point `i` of a branch as a new handle; its residual reads as NaN.
//
// # Safety
// `branch` must be a live handle and `out` a valid pointer.
enum HcStatus hc_branch_solution(const struct HcBranch *branch, size_t i, struct HcSolution **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOMOCONT_H */
