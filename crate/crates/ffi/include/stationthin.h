#ifndef STATIONTHIN_H
#define STATIONTHIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_POINTER = 1,
  ST_STATUS_INVALID_UTF8 = 2,
  ST_STATUS_DOMAIN = 3,
  ST_STATUS_RANGE = 4,
  ST_STATUS_CONFIG = 5,
  ST_STATUS_DATA = 6,
  ST_STATUS_NUMERICAL = 7,
  ST_STATUS_SCHEMA = 8,
  ST_STATUS_IO = 9,
  ST_STATUS_PARSE = 10,
  ST_STATUS_PANIC = 11,
} StStatus;

// Opaque handle to a trained model.
typedef struct StModel StModel;

typedef struct StMetrics {
  uintptr_t n;
  double rmse;
  double mae;
  double mbe;
  // NaN when undefined (fewer than two pairs or constant observations).
  double r2;
} StMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *st_last_error(void);

// Library version as a static NUL-terminated string.
const char *st_version(void);

// Saturation vapor pressure over water in hPa at `ta` degC.
//
// # Safety
// `out` must be null or valid for writes.
enum StStatus st_saturation_vapor_pressure(double ta, double *out);

// Vapor pressure in hPa from RH in percent and Ta in degC.
//
// # Safety
// `out` must be null or valid for writes.
enum StStatus st_rh_to_e(double rh, double ta, double *out);

// RH in percent from vapor pressure in hPa and Ta in degC.
//
// # Safety
// `out` must be null or valid for writes.
enum StStatus st_e_to_rh(double e, double ta, double *out);

// Parses a model from its JSON envelope. Free the handle with
// [`st_model_free`].
//
// # Safety
// `json` must be null or a NUL-terminated string; `out` must be null or
// valid for writes.
enum StStatus st_model_from_json(const char *json, struct StModel **out);

// Loads a model file written by the library.
//
// # Safety
// As for [`st_model_from_json`], with `path` a NUL-terminated path.
enum StStatus st_model_load(const char *path, struct StModel **out);

// Serializes a model to its JSON envelope. Free the string with
// [`st_string_free`].
//
// # Safety
// `model` must be null or a live handle; `out` must be null or valid for
// writes.
enum StStatus st_model_to_json(const struct StModel *model, char **out);

// Number of features a model expects, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
uintptr_t st_model_n_features(const struct StModel *model);

// Predicts one row of `n_features` values; NaN marks a missing value.
//
// # Safety
// `row` must point to `n_features` doubles; `model` and `out` as above.
enum StStatus st_model_predict(const struct StModel *model,
                               const double *row,
                               uintptr_t n_features,
                               double *out);

// Predicts `n_rows` rows stored row-major in `x`, writing `n_rows` values
// to `out`.
//
// # Safety
// `x` must point to `n_rows * n_features` doubles and `out` to `n_rows`
// writable doubles.
enum StStatus st_model_predict_batch(const struct StModel *model,
                                     const double *x,
                                     uintptr_t n_rows,
                                     uintptr_t n_features,
                                     double *out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void st_model_free(struct StModel *model);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void st_string_free(char *s);

// Error metrics of `n` prediction/observation pairs.
//
// # Safety
// `pred` and `obs` must point to `n` doubles; `out` must be null or valid
// for writes.
enum StStatus st_metrics(const double *pred, const double *obs, uintptr_t n, struct StMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STATIONTHIN_H */
