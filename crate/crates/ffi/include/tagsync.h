#ifndef TAGSYNC_H
#define TAGSYNC_H

/* Generated by cbindgen from tagsync-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum TagsyncStatus {
  TAGSYNC_STATUS_OK = 0,
  TAGSYNC_STATUS_NULL_ARGUMENT = 1,
  TAGSYNC_STATUS_INVALID_UTF8 = 2,
  TAGSYNC_STATUS_PARSE_ERROR = 3,
  TAGSYNC_STATUS_RUN_ERROR = 4,
  TAGSYNC_STATUS_IO_ERROR = 5,
  TAGSYNC_STATUS_OUT_OF_RANGE = 6,
} TagsyncStatus;

/**
 * Opaque scenario configuration handle.
 */
typedef struct TagsyncConfig TagsyncConfig;

/**
 * Opaque run-metrics handle.
 */
typedef struct TagsyncMetrics TagsyncMetrics;

/**
 * One metrics row, mirrored for C consumers.
 */
typedef struct TagsyncMetricRow {
  uint64_t step;
  uint64_t ref_time_us;
  double gamma_ticks;
  double rate_or_slope;
  /**
   * 1 if the protocol action completed, 0 if it was lost to power death.
   */
  int powered;
} TagsyncMetricRow;

/**
 * Summary over powered, post-warmup rows.
 */
typedef struct TagsyncSummary {
  uint64_t samples;
  uint64_t gaps;
  double mean_abs_gamma_ticks;
  double max_abs_gamma_ticks;
  double std_gamma_ticks;
  double mean_abs_gamma_ms;
  double max_abs_gamma_ms;
  int converged;
} TagsyncSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of the calling thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (query mode).
 */
uintptr_t tagsync_last_error_message(char *buf, uintptr_t len);

/**
 * Parse a scenario config from its textual `key = value` form.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum TagsyncStatus tagsync_config_parse(const char *text, struct TagsyncConfig **out);

/**
 * Load a scenario config from a file path.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum TagsyncStatus tagsync_config_load(const char *path, struct TagsyncConfig **out);

/**
 * Override the scenario seed.
 *
 * # Safety
 * `config` must be a live handle from `tagsync_config_parse`/`_load`.
 */
enum TagsyncStatus tagsync_config_set_seed(struct TagsyncConfig *config, uint64_t seed);

/**
 * Release a config handle. Null is a no-op.
 *
 * # Safety
 * `config` must be a live handle or null; it is invalid afterwards.
 */
void tagsync_config_free(struct TagsyncConfig *config);

/**
 * Run the configured scenario and hand back a metrics handle.
 *
 * # Safety
 * `config` must be a live handle; `out` must be a valid pointer.
 */
enum TagsyncStatus tagsync_run_scenario(const struct TagsyncConfig *config,
                                        struct TagsyncMetrics **out);

/**
 * Number of rows in the metrics series. Null handle reads as zero.
 *
 * # Safety
 * `metrics` must be a live handle or null.
 */
uintptr_t tagsync_metrics_len(const struct TagsyncMetrics *metrics);

/**
 * Copy row `index` into `out`.
 *
 * # Safety
 * `metrics` must be a live handle; `out` must be a valid pointer.
 */
enum TagsyncStatus tagsync_metrics_row(const struct TagsyncMetrics *metrics,
                                       uintptr_t index,
                                       struct TagsyncMetricRow *out);

/**
 * Copy the run summary into `out`.
 *
 * # Safety
 * `metrics` must be a live handle; `out` must be a valid pointer.
 */
enum TagsyncStatus tagsync_metrics_summary(const struct TagsyncMetrics *metrics,
                                           struct TagsyncSummary *out);

/**
 * Write the metrics series to `path` in the CSV format.
 *
 * # Safety
 * `metrics` must be a live handle; `path` a NUL-terminated string.
 */
enum TagsyncStatus tagsync_metrics_write_csv(const struct TagsyncMetrics *metrics,
                                             const char *path);

/**
 * Release a metrics handle. Null is a no-op.
 *
 * # Safety
 * `metrics` must be a live handle or null; it is invalid afterwards.
 */
void tagsync_metrics_free(struct TagsyncMetrics *metrics);

/**
 * Theoretical integral-gain upper bound `2 / (B * f)`; NaN when the
 * arguments are out of domain.
 */
double tagsync_convergence_bound(double event_period_s, double clock_hz);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAGSYNC_H */
