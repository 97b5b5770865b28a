#ifndef BASKETMC_H
#define BASKETMC_H

/* Generated by cbindgen from the basketmc-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible C-ABI call.
 *
 * The numeric values of `Validation` and `Budget` match the CLI exit codes
 * for the same failures, so callers can share handling between the two
 * entry points.
 */
typedef enum BmcStatus {
  /**
   * The call succeeded.
   */
  BmcStatus_Ok = 0,
  /**
   * Filesystem or serialization failure.
   */
  BmcStatus_Io = 1,
  /**
   * The configuration or an argument failed validation.
   */
  BmcStatus_Validation = 2,
  /**
   * The sampling cost budget was exhausted before the target accuracy.
   */
  BmcStatus_Budget = 3,
  /**
   * A required pointer argument was null.
   */
  BmcStatus_NullArgument = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  BmcStatus_Utf8 = 5,
  /**
   * The estimator panicked; the handle state is unchanged.
   */
  BmcStatus_Panic = 6,
} BmcStatus;

/**
 * Opaque run configuration; create with [`bmc_config_from_json`], release
 * with [`bmc_config_free`].
 */
typedef struct BmcConfig BmcConfig;

/**
 * Opaque run result; produced by [`bmc_run_estimate`], released with
 * [`bmc_result_free`].
 */
typedef struct BmcResult BmcResult;

/**
 * Per-level statistics of a finished run, mirrored into a C layout.
 */
typedef struct BmcLevelStats {
  /**
   * Level index `l`, from 0 to the configured maximum.
   */
  uint32_t level;
  /**
   * Samples drawn at this level.
   */
  uint64_t n;
  /**
   * Sample mean of the level term.
   */
  double mean;
  /**
   * Per-sample variance estimate of the level term.
   */
  double variance;
  /**
   * Cost of one sample at this level.
   */
  double cost_per_sample;
} BmcLevelStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on the calling thread.
 *
 * The pointer stays valid until the next C-ABI call from the same thread;
 * after a successful call it points at an empty string. The library keeps
 * ownership — do not free it.
 */
const char *bmc_last_error_message(void);

/**
 * Parses and validates a JSON run configuration.
 *
 * On `Ok`, `*out` owns a new configuration handle.
 *
 * # Safety
 *
 * `json` must point at a NUL-terminated string and `out` at a writable
 * pointer slot; both must be non-null.
 */
enum BmcStatus bmc_config_from_json(const char *json, struct BmcConfig **out);

/**
 * Overrides the configuration's RNG seed, like the CLI `--seed` flag.
 *
 * # Safety
 *
 * `config` must be a live handle from [`bmc_config_from_json`] or null.
 */
enum BmcStatus bmc_config_set_seed(struct BmcConfig *config, uint64_t seed);

/**
 * Releases a configuration handle. Null is a no-op.
 *
 * # Safety
 *
 * `config` must be a handle from [`bmc_config_from_json`] that has not
 * already been freed, or null.
 */
void bmc_config_free(struct BmcConfig *config);

/**
 * Runs the adaptive multilevel estimator described by `config`.
 *
 * The run is deterministic in the configuration: the same handle (same
 * seed included) always produces bit-identical results. On `Ok`, `*out`
 * owns a new result handle.
 *
 * # Safety
 *
 * `config` must be a live configuration handle and `out` a writable
 * pointer slot; both must be non-null.
 */
enum BmcStatus bmc_run_estimate(const struct BmcConfig *config, struct BmcResult **out);

/**
 * Telescoped estimate of the expected payoff. NaN if `result` is null.
 *
 * # Safety
 *
 * `result` must be a live result handle or null.
 */
double bmc_result_estimate(const struct BmcResult *result);

/**
 * Standard error of the estimate. NaN if `result` is null.
 *
 * # Safety
 *
 * `result` must be a live result handle or null.
 */
double bmc_result_standard_error(const struct BmcResult *result);

/**
 * Total sampling cost actually spent. NaN if `result` is null.
 *
 * # Safety
 *
 * `result` must be a live result handle or null.
 */
double bmc_result_total_cost(const struct BmcResult *result);

/**
 * Number of levels in the run, i.e. the valid index range for
 * [`bmc_result_level`]. Zero if `result` is null.
 *
 * # Safety
 *
 * `result` must be a live result handle or null.
 */
uint64_t bmc_result_num_levels(const struct BmcResult *result);

/**
 * Copies the statistics of one level into `*out`.
 *
 * # Safety
 *
 * `result` must be a live result handle and `out` a writable
 * [`BmcLevelStats`] slot; both must be non-null.
 */
enum BmcStatus bmc_result_level(const struct BmcResult *result,
                                uint64_t index,
                                struct BmcLevelStats *out);

/**
 * Serializes the full result (estimate, allocation, per-level statistics)
 * to a JSON string.
 *
 * On `Ok`, `*out` owns a NUL-terminated string; release it with
 * [`bmc_string_free`].
 *
 * # Safety
 *
 * `result` must be a live result handle and `out` a writable pointer
 * slot; both must be non-null.
 */
enum BmcStatus bmc_result_to_json(const struct BmcResult *result, char **out);

/**
 * Releases a string returned by [`bmc_result_to_json`]. Null is a no-op.
 *
 * # Safety
 *
 * `string` must have been returned by this library and not already freed,
 * or null.
 */
void bmc_string_free(char *string);

/**
 * Releases a result handle. Null is a no-op.
 *
 * # Safety
 *
 * `result` must be a handle from [`bmc_run_estimate`] that has not already
 * been freed, or null.
 */
void bmc_result_free(struct BmcResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BASKETMC_H */
