#ifndef MAR_KIT_H
#define MAR_KIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum MarStatus {
  MAR_STATUS_OK = 0,
  MAR_STATUS_NULL_POINTER = 1,
  MAR_STATUS_INVALID_ARGUMENT = 2,
  MAR_STATUS_DIMENSION = 3,
  MAR_STATUS_NUMERIC = 4,
  MAR_STATUS_RANK_DEFICIENT = 5,
  MAR_STATUS_PRECONDITION = 6,
  MAR_STATUS_INDEX = 7,
  MAR_STATUS_DEGENERATE = 8,
  MAR_STATUS_DOMAIN = 9,
  MAR_STATUS_PARSE = 10,
  MAR_STATUS_IO = 11,
  MAR_STATUS_BUFFER_TOO_SMALL = 12,
  MAR_STATUS_PANIC = 13,
} MarStatus;

/**
 * Estimation method; pass as the `method` argument of [`mar_fit`].
 */
typedef enum MarMethod {
  MAR_METHOD_PROJ = 0,
  MAR_METHOD_LSE = 1,
  MAR_METHOD_MLE = 2,
} MarMethod;

/**
 * Noise covariance design; pass as the `setting` argument of [`mar_simulate`].
 */
typedef enum MarSetting {
  /**
   * Identity covariance.
   */
  MAR_SETTING_IDENTITY = 1,
  /**
   * Random full covariance.
   */
  MAR_SETTING_FULL = 2,
  /**
   * Random Kronecker covariance.
   */
  MAR_SETTING_KRONECKER = 3,
} MarSetting;

/**
 * A fitted MAR(1) model.
 */
typedef struct MarFit MarFit;

/**
 * A matrix time series `X_1, ..., X_T`.
 */
typedef struct MarSeries MarSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread, NUL-terminated and
 * truncated to `len` bytes, into `buf`. Returns the full message length
 * excluding the terminator; pass `buf = NULL` to query it.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t mar_last_error_message(char *buf, size_t len);

/**
 * Builds a series from `t_len` consecutive column-major `m x n` matrices.
 *
 * # Safety
 * `data` must point to `m * n * t_len` readable doubles and `out` to a
 * writable handle slot.
 */
enum MarStatus mar_series_new(const double *data,
                              size_t m,
                              size_t n,
                              size_t t_len,
                              struct MarSeries **out);

/**
 * Reads a long-format CSV (`t,row,col,value`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum MarStatus mar_series_load(const char *path, struct MarSeries **out);

/**
 * Writes the series as long-format CSV.
 *
 * # Safety
 * `series` must be a live handle and `path` a NUL-terminated string.
 */
enum MarStatus mar_series_save(const struct MarSeries *series, const char *path);

/**
 * # Safety
 * `series` must be a live handle; the output pointers must be writable.
 */
enum MarStatus mar_series_dims(const struct MarSeries *series, size_t *m, size_t *n, size_t *t_len);

/**
 * Copies observation `t` (0-based) into `buf` in column-major order.
 *
 * # Safety
 * `series` must be a live handle and `buf` must hold `len` doubles.
 */
enum MarStatus mar_series_get(const struct MarSeries *series, size_t t, double *buf, size_t len);

/**
 * # Safety
 * `series` must be NULL or a handle not yet freed.
 */
void mar_series_free(struct MarSeries *series);

/**
 * Simulates `t_len` observations from a random stationary model with
 * `rho(A) rho(B) = rho`, after `burn_in` discarded steps.
 *
 * # Safety
 * `out` must be a writable handle slot.
 */
enum MarStatus mar_simulate(int32_t setting,
                            size_t m,
                            size_t n,
                            size_t t_len,
                            double rho,
                            size_t burn_in,
                            uint64_t seed,
                            struct MarSeries **out);

/**
 * Fits `A` and `B`. `max_iter = 0` and `tol <= 0` select the defaults.
 *
 * # Safety
 * `series` must be a live handle and `out` a writable handle slot.
 */
enum MarStatus mar_fit(const struct MarSeries *series,
                       int32_t method,
                       size_t max_iter,
                       double tol,
                       struct MarFit **out);

/**
 * # Safety
 * `fit` must be a live handle; `m` and `n` must be writable.
 */
enum MarStatus mar_fit_dims(const struct MarFit *fit, size_t *m, size_t *n);

/**
 * Copies the `m x m` row coefficient `A` (unit Frobenius norm).
 *
 * # Safety
 * `fit` must be a live handle and `buf` must hold `len` doubles.
 */
enum MarStatus mar_fit_a(const struct MarFit *fit, double *buf, size_t len);

/**
 * Copies the `n x n` column coefficient `B`.
 *
 * # Safety
 * `fit` must be a live handle and `buf` must hold `len` doubles.
 */
enum MarStatus mar_fit_b(const struct MarFit *fit, double *buf, size_t len);

/**
 * # Safety
 * `fit` must be a live handle; the output pointers must be writable.
 */
enum MarStatus mar_fit_convergence(const struct MarFit *fit, bool *converged, size_t *iterations);

/**
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void mar_fit_free(struct MarFit *fit);

/**
 * Wald test of Kronecker structure in the VAR(1) coefficient.
 *
 * # Safety
 * `series` must be a live handle; the output pointers must be writable.
 */
enum MarStatus mar_spec_test(const struct MarSeries *series,
                             double *statistic,
                             size_t *df,
                             double *p_value);

/**
 * Impulse responses of the fitted model to a one standard deviation shock
 * in entry `(shock_row, shock_col)`. Writes `horizon + 1` column-major
 * `m x n` responses back to back, so `buf` needs `(horizon + 1) * m * n`
 * doubles.
 *
 * # Safety
 * `fit` must be a live handle and `buf` must hold `len` doubles.
 */
enum MarStatus mar_irf(const struct MarFit *fit,
                       size_t shock_row,
                       size_t shock_col,
                       size_t horizon,
                       double *buf,
                       size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAR_KIT_H */
