#ifndef FOODSEC_H
#define FOODSEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success; everything else is negative.
typedef enum FoodsecStatus {
  FOODSEC_STATUS_OK = 0,
  FOODSEC_STATUS_NULL_POINTER = -1,
  FOODSEC_STATUS_INVALID_ARGUMENT = -2,
  // The statistic is not defined for this input (e.g. zero variance).
  FOODSEC_STATUS_UNDEFINED = -3,
  FOODSEC_STATUS_CONFIG = -4,
  FOODSEC_STATUS_DATA = -5,
  FOODSEC_STATUS_IO = -6,
  FOODSEC_STATUS_INTERNAL = -7,
} FoodsecStatus;

typedef enum FoodsecFcsClass {
  FOODSEC_FCS_CLASS_POOR = 0,
  FOODSEC_FCS_CLASS_BORDERLINE = 1,
  FOODSEC_FCS_CLASS_ACCEPTABLE = 2,
} FoodsecFcsClass;

// Layered run configuration for [`foodsec_run`].
typedef struct FoodsecConfig FoodsecConfig;

// A fitted polynomial-basis model.
typedef struct FoodsecModel FoodsecModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *foodsec_last_error(void);

// Library version as a static NUL-terminated string.
const char *foodsec_version(void);

// Pearson correlation of `x[0..n]` and `y[0..n]`.
//
// # Safety
// `x` and `y` must point to `n` readable doubles; `out` must be writable.
enum FoodsecStatus foodsec_pearson(const double *x, const double *y, size_t n, double *out);

// Two-sided p-value of correlation `r` over `n` pairs.
//
// # Safety
// `out` must be writable.
enum FoodsecStatus foodsec_pearson_p(double r, size_t n, double *out);

// Fisher-z confidence interval of `r` at `level` (e.g. 0.95).
//
// # Safety
// `lo` and `hi` must be writable.
enum FoodsecStatus foodsec_fisher_ci(double r, size_t n, double level, double *lo, double *hi);

// Normalized Shannon entropy of contact volumes.
//
// # Safety
// `volumes` must point to `n` readable values; `out` must be writable.
enum FoodsecStatus foodsec_social_diversity(const uint64_t *volumes, size_t n, double *out);

// Number of food groups in the default FCS weighting.
size_t foodsec_fcs_group_count(void);

// Name of default food group `i` (the order [`foodsec_fcs`] expects), or NULL.
const char *foodsec_fcs_group_name(size_t i);

// Food consumption score under the default weights. `days[i]` is the 7-day
// frequency of group `foodsec_fcs_group_name(i)`; `n` must equal the group count.
//
// # Safety
// `days` must point to `n` readable bytes; `out` must be writable.
enum FoodsecStatus foodsec_fcs(const uint8_t *days, size_t n, double *out);

// FCS class with inclusive upper bounds `poor_max` and `borderline_max`.
//
// # Safety
// `out` must be writable.
enum FoodsecStatus foodsec_classify_fcs(double score,
                                        double poor_max,
                                        double borderline_max,
                                        enum FoodsecFcsClass *out);

// MPI = headcount * intensity, both in [0, 1].
//
// # Safety
// `out` must be writable.
enum FoodsecStatus foodsec_mpi(double headcount, double intensity, double *out);

// Fits `y` on a degree-1 or degree-2 polynomial basis of `k` variables.
// `x` is row-major `n x k`. NaN marks a missing value; such rows are dropped.
//
// # Safety
// `x` must hold `n * k` doubles, `y` must hold `n`; `out` must be writable.
enum FoodsecStatus foodsec_model_fit(const double *x,
                                     const double *y,
                                     size_t n,
                                     size_t k,
                                     uint8_t degree,
                                     struct FoodsecModel **out);

// Prediction for one observation of `k` variables.
//
// # Safety
// `model` must come from [`foodsec_model_fit`]; `x` must hold `k` doubles.
enum FoodsecStatus foodsec_model_predict(const struct FoodsecModel *model,
                                         const double *x,
                                         size_t k,
                                         double *out);

// Correlation between fitted and observed values.
//
// # Safety
// `model` must come from [`foodsec_model_fit`].
enum FoodsecStatus foodsec_model_fit_r(const struct FoodsecModel *model, double *out);

// Number of basis terms, intercept included.
//
// # Safety
// `model` must come from [`foodsec_model_fit`] or be NULL.
size_t foodsec_model_n_terms(const struct FoodsecModel *model);

// Copies raw-scale coefficients (one per term) into `out[0..len]`.
//
// # Safety
// `model` must come from [`foodsec_model_fit`]; `out` must hold `len` doubles.
enum FoodsecStatus foodsec_model_coefficients(const struct FoodsecModel *model,
                                              double *out,
                                              size_t len);

// # Safety
// `model` must come from [`foodsec_model_fit`] and not be used afterwards.
void foodsec_model_free(struct FoodsecModel *model);

// New configuration holding only defaults.
struct FoodsecConfig *foodsec_config_new(void);

// Layers a TOML config file over the current settings.
//
// # Safety
// `config` must come from [`foodsec_config_new`]; `path` must be a C string.
enum FoodsecStatus foodsec_config_load(struct FoodsecConfig *config, const char *path);

// Sets one key from a `key=value` string, with the value written as in the config file.
//
// # Safety
// `config` must come from [`foodsec_config_new`]; `assignment` must be a C string.
enum FoodsecStatus foodsec_config_set(struct FoodsecConfig *config, const char *assignment);

// # Safety
// `config` must come from [`foodsec_config_new`] and not be used afterwards.
void foodsec_config_free(struct FoodsecConfig *config);

// Runs a pipeline subcommand (`synth`, `features`, ..., `all`) with `config`.
// `FOODSEC_*` environment variables are not consulted.
//
// # Safety
// `config` must come from [`foodsec_config_new`]; `command` must be a C string.
enum FoodsecStatus foodsec_run(const struct FoodsecConfig *config, const char *command);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOODSEC_H */
