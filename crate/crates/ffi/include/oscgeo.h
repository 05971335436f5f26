#ifndef OSCGEO_H
#define OSCGEO_H

/* Generated by cbindgen from oscgeo-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function. Values above 0 match
 * the pipeline exit codes where one exists.
 */
typedef enum OscgeoStatus {
  OSCGEO_STATUS_OK = 0,
  /**
   * A supplied pointer was null or an argument was invalid.
   */
  OSCGEO_STATUS_INVALID_ARGUMENT = 1,
  OSCGEO_STATUS_DATA_ERROR = 2,
  OSCGEO_STATUS_FIT_FAILURE = 3,
  OSCGEO_STATUS_NUMERIC_ERROR = 4,
  OSCGEO_STATUS_DEGENERATE_STATISTICS = 5,
  OSCGEO_STATUS_IO_ERROR = 6,
} OscgeoStatus;

/**
 * Opaque observation series handle.
 */
typedef struct OscgeoSeries OscgeoSeries;

/**
 * Model parameter vector: three positive scales and four nuisance
 * third-derivative constants.
 */
typedef struct OscgeoParams {
  double sigma1;
  double sigma2;
  double sigma_eps;
  double theta0;
  double theta1;
  double theta2;
  double theta3;
} OscgeoParams;

/**
 * Options for `oscgeo_fit`. Zero-initialize and set fields; a zero
 * `max_iter` means the library default.
 */
typedef struct OscgeoFitOptions {
  /**
   * Iteration budget; 0 selects the default (2000).
   */
  uintptr_t max_iter;
  /**
   * Simplex-spread tolerance; 0 selects the default (1e-6).
   */
  double tol;
  /**
   * Number of optimizer starts; 0 selects 1.
   */
  uintptr_t multi_start;
  uint64_t seed;
} OscgeoFitOptions;

/**
 * Fit outcome.
 */
typedef struct OscgeoFitReport {
  struct OscgeoParams params;
  double log_likelihood;
  uintptr_t iterations;
  bool converged;
} OscgeoFitReport;

/**
 * Per-step geometry output written by `oscgeo_filter_geometry`.
 */
typedef struct OscgeoGeometryRow {
  double norm_v;
  double norm_nabla_v;
  double beta1;
  double beta2;
  /**
   * 1 when the covariant-derivative norm is within tolerance of zero.
   */
  uint8_t geodesic;
} OscgeoGeometryRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or null when the previous call
 * succeeded. The pointer stays valid until the next failing call on the
 * same thread.
 */
const char *oscgeo_last_error_message(void);

/**
 * Library version as a static C string.
 */
const char *oscgeo_version(void);

/**
 * Build a series from a caller-owned buffer of observations with uniform
 * step `dt`. The buffer is copied.
 *
 * # Safety
 * `values` must point to `len` readable doubles and `out` to a writable
 * pointer slot.
 */
enum OscgeoStatus oscgeo_series_from_values(const double *values,
                                            uintptr_t len,
                                            double dt,
                                            struct OscgeoSeries **out);

/**
 * Read a `date,price` CSV and transform to log relative price.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable slot.
 */
enum OscgeoStatus oscgeo_series_read_csv(const char *path, double dt, struct OscgeoSeries **out);

/**
 * Number of observations in a series, 0 for a null handle.
 *
 * # Safety
 * `series` must be a live handle from this library or null.
 */
uintptr_t oscgeo_series_len(const struct OscgeoSeries *series);

/**
 * Release a series handle. Null is accepted.
 *
 * # Safety
 * `series` must be a handle returned by this library, not yet freed.
 */
void oscgeo_series_free(struct OscgeoSeries *series);

/**
 * Generate a synthetic damped-oscillator series (the built-in test
 * drift) and return it as a handle.
 *
 * # Safety
 * `out` must be a writable slot.
 */
enum OscgeoStatus oscgeo_series_simulate_oscillator(double sigma2,
                                                    double sigma_eps,
                                                    double dt,
                                                    uintptr_t n,
                                                    uint64_t seed,
                                                    struct OscgeoSeries **out);

/**
 * Maximize the quasi likelihood from the given starting parameters.
 *
 * # Safety
 * `series` must be a live handle; `init` and `report` must point to
 * valid structs; `options` may be null for defaults.
 */
enum OscgeoStatus oscgeo_fit(const struct OscgeoSeries *series,
                             const struct OscgeoParams *init,
                             const struct OscgeoFitOptions *options,
                             struct OscgeoFitReport *report);

/**
 * Quasi log likelihood at fixed parameters.
 *
 * # Safety
 * `series`, `params` and `out` must be valid pointers.
 */
enum OscgeoStatus oscgeo_log_likelihood(const struct OscgeoSeries *series,
                                        const struct OscgeoParams *params,
                                        double *out);

/**
 * Filter the series at fixed parameters and write one geometry row per
 * transition (series length minus one) into `rows`.
 *
 * `geodesic_tol` <= 0 selects the default tolerance, a small fraction of
 * the median covariant-derivative norm.
 *
 * # Safety
 * `rows` must have capacity for `rows_capacity` entries; `written` must
 * be a writable slot.
 */
enum OscgeoStatus oscgeo_filter_geometry(const struct OscgeoSeries *series,
                                         const struct OscgeoParams *params,
                                         double geodesic_tol,
                                         struct OscgeoGeometryRow *rows,
                                         uintptr_t rows_capacity,
                                         uintptr_t *written);

/**
 * Run the complete file pipeline: ingest `input_csv`, fit, filter,
 * aggregate and write every artifact under `out_dir`.
 *
 * # Safety
 * `input_csv` and `out_dir` must be NUL-terminated strings.
 */
enum OscgeoStatus oscgeo_run_pipeline(const char *input_csv,
                                      const char *out_dir,
                                      double dt,
                                      double burn_in_fraction,
                                      uintptr_t max_iter);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OSCGEO_H */
