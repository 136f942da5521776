#ifndef GPGROUP_H
#define GPGROUP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Dependence structure of simulated panels.
typedef enum GpgDependence {
  GPG_DEPENDENCE_INDEPENDENCE = 0,
  GPG_DEPENDENCE_CROSS_SECTIONAL = 1,
  GPG_DEPENDENCE_BLOCK_WISE = 2,
} GpgDependence;

// Status codes. Values 2 to 4 match the command-line exit codes.
typedef enum GpgStatus {
  GPG_STATUS_OK = 0,
  GPG_STATUS_NULL_POINTER = 1,
  GPG_STATUS_PARSE = 2,
  GPG_STATUS_ESTIMATION = 3,
  GPG_STATUS_INFEASIBLE = 4,
  GPG_STATUS_INVALID_ARGUMENT = 5,
  GPG_STATUS_BUFFER_TOO_SMALL = 6,
  GPG_STATUS_PANIC = 7,
} GpgStatus;

// Opaque fitted model with its Wald intervals.
typedef struct GpgFit GpgFit;

// Opaque excess panel.
typedef struct GpgPanel GpgPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *gpg_last_error(void);

// Reads a long-format CSV and thresholds it at the per-subject
// `quantile`. `covariates` is a comma-separated list of columns, or null
// for every non-reserved column.
//
// # Safety
// `path` and `covariates` (if not null) must be NUL-terminated strings;
// `out` must be a valid pointer.
enum GpgStatus gpg_panel_read_csv(const char *path,
                                  const char *covariates,
                                  double quantile,
                                  struct GpgPanel **out);

// Simulates a panel at the default true parameters (12 subjects).
//
// # Safety
// `out` must be a valid pointer.
enum GpgStatus gpg_panel_simulate(uintptr_t n_times,
                                  enum GpgDependence dependence,
                                  uintptr_t block_len,
                                  double within_corr,
                                  uint64_t seed,
                                  struct GpgPanel **out);

// # Safety
// `panel` must be null or a handle from this library, not yet freed.
void gpg_panel_free(struct GpgPanel *panel);

// # Safety
// `panel` must be a live handle.
uintptr_t gpg_panel_n_subjects(const struct GpgPanel *panel);

// # Safety
// `panel` must be a live handle.
uintptr_t gpg_panel_n_excess(const struct GpgPanel *panel);

// Fits the model at a fixed assignment. `scale_groups` and
// `shape_groups` hold `n` 1-based labels each; pass null for both to fit
// a single group. Intervals are 95% Wald intervals from the sandwich
// covariance with dependence window `window`.
//
// # Safety
// `panel` must be a live handle; label arrays must hold `n` values.
enum GpgStatus gpg_fit(const struct GpgPanel *panel,
                       const uint32_t *scale_groups,
                       const uint32_t *shape_groups,
                       uintptr_t n,
                       uintptr_t window,
                       uint64_t seed,
                       struct GpgFit **out);

// Searches group structures over the given grids. `hierarchical != 0`
// uses the two-stage search with hierarchical merging (the shape grid is
// then ignored); otherwise the full BIC comparison.
//
// # Safety
// `panel` must be a live handle; grids must hold the stated counts.
enum GpgStatus gpg_select_groups(const struct GpgPanel *panel,
                                 const uint32_t *g_scale,
                                 uintptr_t n_scale,
                                 const uint32_t *g_shape,
                                 uintptr_t n_shape,
                                 uintptr_t runs_per_pair,
                                 int32_t hierarchical,
                                 uintptr_t window,
                                 uint64_t seed,
                                 struct GpgFit **out);

// # Safety
// `fit` must be null or a handle from this library, not yet freed.
void gpg_fit_free(struct GpgFit *fit);

// BIC of the fit, NaN for a null handle.
//
// # Safety
// `fit` must be a live handle.
double gpg_fit_bic(const struct GpgFit *fit);

// Composite log-likelihood of the fit, NaN for a null handle.
//
// # Safety
// `fit` must be a live handle.
double gpg_fit_loglik(const struct GpgFit *fit);

// Number of scale and shape groups.
//
// # Safety
// `fit`, `g_scale` and `g_shape` must be valid pointers.
enum GpgStatus gpg_fit_dims(const struct GpgFit *fit, uintptr_t *g_scale, uintptr_t *g_shape);

// Writes the 1-based group labels of each subject into arrays of length
// `n`, which must equal the number of subjects.
//
// # Safety
// `fit` must be a live handle; both arrays must hold `n` values.
enum GpgStatus gpg_fit_assignment(const struct GpgFit *fit,
                                  uint32_t *scale,
                                  uint32_t *shape,
                                  uintptr_t n);

// Number of coefficients (all γ's, then all δ's).
//
// # Safety
// `fit` must be a live handle.
uintptr_t gpg_fit_n_coefficients(const struct GpgFit *fit);

// Copies estimates, standard errors and interval bounds into arrays of
// length `len`, which must be at least [`gpg_fit_n_coefficients`]. Any
// array may be null to skip it.
//
// # Safety
// Non-null arrays must hold `len` values.
enum GpgStatus gpg_fit_coefficients(const struct GpgFit *fit,
                                    double *estimate,
                                    double *se,
                                    double *lo,
                                    double *hi,
                                    uintptr_t len);

// JSON of the full fit (with covariances). Release with [`gpg_string_free`].
//
// # Safety
// `fit` and `out` must be valid pointers.
enum GpgStatus gpg_fit_to_json(const struct GpgFit *fit, char **out);

// # Safety
// `s` must be null or a string returned by this library.
void gpg_string_free(char *s);

// GP distribution function.
//
// # Safety
// `out` must be a valid pointer.
enum GpgStatus gpg_gp_cdf(double z, double scale, double shape, double *out);

// GP quantile function.
//
// # Safety
// `out` must be a valid pointer.
enum GpgStatus gpg_gp_quantile(double p, double scale, double shape, double *out);

// Level exceeded once every `period` observations on average, for
// exceedance probability `zeta` of `threshold`.
//
// # Safety
// `out` must be a valid pointer.
enum GpgStatus gpg_return_level(double threshold,
                                double zeta,
                                double period,
                                double scale,
                                double shape,
                                double *out);

// Rand index of two labelings of `n` subjects.
//
// # Safety
// `a` and `b` must hold `n` values; `out` must be valid.
enum GpgStatus gpg_rand_index(const uint32_t *a, const uint32_t *b, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPGROUP_H */
