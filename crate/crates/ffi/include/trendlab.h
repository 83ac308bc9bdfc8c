#ifndef TRENDLAB_H
#define TRENDLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of changepoint features written by [`tl_cp_features`].
 */
#define TL_CP_FEATURE_COUNT 22

/**
 * Number of trend-or-flat features written by [`tl_tof_features`].
 */
#define TL_TOF_FEATURE_COUNT 5

typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_ARGUMENT = 2,
  TL_STATUS_IO = 3,
  TL_STATUS_PARSE = 4,
  TL_STATUS_MODEL = 5,
  TL_STATUS_PANIC = 6,
} TlStatus;

/**
 * A trained gradient-boosted model.
 */
typedef struct TlModel TlModel;

/**
 * Daily bars of one stock.
 */
typedef struct TlQuoteSeries TlQuoteSeries;

typedef struct TlGbdtParams {
  size_t n_estimators;
  size_t max_depth;
  double learning_rate;
  double reg_lambda;
  double reg_alpha;
  double subsample;
  double scale_pos_weight;
  double min_child_weight;
  double gamma;
  uint64_t seed;
  /**
   * 0 uses every core.
   */
  size_t threads;
} TlGbdtParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *tl_last_error(void);

struct TlGbdtParams tl_gbdt_params_default(void);

/**
 * Fits a model on the row-major `n_rows × n_cols` matrix `x` and labels
 * `y` (nonzero = positive).
 *
 * # Safety
 * `x` must hold `n_rows·n_cols` values, `y` `n_rows` bytes; `params` and
 * `out` must be valid pointers.
 */
enum TlStatus tl_model_fit(const double *x,
                           size_t n_rows,
                           size_t n_cols,
                           const uint8_t *y,
                           const struct TlGbdtParams *params,
                           struct TlModel **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TlStatus tl_model_from_json(const char *json, struct TlModel **out);

/**
 * Serialises `model`; release the string with [`tl_string_free`].
 *
 * # Safety
 * `model` must come from this library and `out` must be a valid pointer.
 */
enum TlStatus tl_model_to_json(const struct TlModel *model, char **out);

/**
 * Number of features the model expects, 0 for null.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t tl_model_n_features(const struct TlModel *model);

/**
 * Number of trees, 0 for null.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t tl_model_n_trees(const struct TlModel *model);

/**
 * Writes one positive-class probability per row of `x` into `out`.
 *
 * # Safety
 * `x` must hold `n_rows·n_cols` values and `out` room for `n_rows`.
 */
enum TlStatus tl_model_predict_proba(const struct TlModel *model,
                                     const double *x,
                                     size_t n_rows,
                                     size_t n_cols,
                                     double *out);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used afterwards.
 */
void tl_model_free(struct TlModel *model);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void tl_string_free(char *s);

/**
 * Loads a quote CSV with the standard column names.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TlStatus tl_quotes_load(const char *path, struct TlQuoteSeries **out);

/**
 * Number of bars, 0 for null.
 *
 * # Safety
 * `quotes` must be null or come from this library.
 */
size_t tl_quotes_len(const struct TlQuoteSeries *quotes);

/**
 * # Safety
 * `quotes` must be null or come from this library, and not be used afterwards.
 */
void tl_quotes_free(struct TlQuoteSeries *quotes);

/**
 * Changepoint features of day `t`. `*available` is set to false (and `out`
 * left untouched) when the ±5-day context does not fit in the series.
 *
 * # Safety
 * `out` must have room for [`TL_CP_FEATURE_COUNT`] values.
 */
enum TlStatus tl_cp_features(const struct TlQuoteSeries *quotes,
                             size_t t,
                             bool log_mode,
                             double *out,
                             bool *available);

/**
 * Trend-or-flat features of rows `start..=end`, in the order reg_close,
 * close_r2, reg_vol, vol_r2, len_trend.
 *
 * # Safety
 * `out` must have room for [`TL_TOF_FEATURE_COUNT`] values.
 */
enum TlStatus tl_tof_features(const struct TlQuoteSeries *quotes,
                              size_t start,
                              size_t end,
                              bool log_mode,
                              double *out);

/**
 * ROC AUC of `scores` against `labels` (nonzero = positive).
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be valid.
 */
enum TlStatus tl_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * `direction · (exit − entry) / entry`, with direction +1 long, −1 short.
 */
double tl_trend_profit(double entry_close, double exit_close, int8_t direction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRENDLAB_H */
