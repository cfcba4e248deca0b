#ifndef KREIN_H
#define KREIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KreinStatus {
  KREIN_STATUS_OK = 0,
  KREIN_STATUS_NULL_POINTER = 1,
  KREIN_STATUS_INVALID_UTF8 = 2,
  KREIN_STATUS_CONFIG = 3,
  KREIN_STATUS_NUMERICAL = 4,
  KREIN_STATUS_IO = 5,
  KREIN_STATUS_OUT_OF_RANGE = 6,
  KREIN_STATUS_PANIC = 7,
} KreinStatus;

/**
 * Verdict attached to a spectrum report.
 */
typedef enum KreinVerdict {
  KREIN_VERDICT_PASSED = 0,
  KREIN_VERDICT_FLAGGED = 1,
  KREIN_VERDICT_FAILED = 2,
} KreinVerdict;

/**
 * Opaque result of a scenario run (one report per chemical potential).
 */
typedef struct KreinRun KreinRun;

/**
 * Opaque scenario configuration.
 */
typedef struct KreinScenario KreinScenario;

typedef struct KreinCounts {
  size_t k_ham;
  size_t k_r;
  size_t k_c;
  size_t k_i_minus;
  /**
   * 1 when `k_r + 2k_c + 2k_i^-` matches the index prediction.
   */
  int32_t identity_holds;
} KreinCounts;

typedef struct KreinEigenvalue {
  double lambda_re;
  double lambda_im;
  double z_re;
  double z_im;
  size_t multiplicity;
  /**
   * 0 Krein zero, 1 removable pole, 2 direct oracle.
   */
  int32_t source;
  /**
   * +1 positive, -1 negative, 0 not applicable or near-degenerate.
   */
  int32_t signature;
} KreinEigenvalue;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *krein_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *krein_version(void);

/**
 * Load a shipped preset by name.
 *
 * # Safety
 * `name` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum KreinStatus krein_scenario_from_preset(const char *name, struct KreinScenario **out);

/**
 * Parse a scenario from TOML text.
 *
 * # Safety
 * `toml` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum KreinStatus krein_scenario_from_toml(const char *toml, struct KreinScenario **out);

/**
 * Release a scenario; null is ignored.
 *
 * # Safety
 * `scenario` must come from this library and not be used afterwards.
 */
void krein_scenario_free(struct KreinScenario *scenario);

/**
 * Replace the chemical potential (and drop any range).
 *
 * # Safety
 * `scenario` must be a valid handle.
 */
enum KreinStatus krein_scenario_set_mu(struct KreinScenario *scenario, double mu);

/**
 * Set the output directory.
 *
 * # Safety
 * `scenario` must be a valid handle and `dir` a valid NUL-terminated string.
 */
enum KreinStatus krein_scenario_set_output(struct KreinScenario *scenario, const char *dir);

/**
 * Enable (nonzero) or disable the direct-spectrum cross-check.
 *
 * # Safety
 * `scenario` must be a valid handle.
 */
enum KreinStatus krein_scenario_set_oracle(struct KreinScenario *scenario, int32_t enabled);

/**
 * Run the scenario end to end, writing artifacts under its output directory.
 *
 * # Safety
 * `scenario` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_run_spectrum(const struct KreinScenario *scenario, struct KreinRun **out);

/**
 * Release a run; null is ignored.
 *
 * # Safety
 * `run` must come from this library and not be used afterwards.
 */
void krein_run_free(struct KreinRun *run);

/**
 * Number of reports in a run.
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_run_report_count(const struct KreinRun *run, size_t *out);

/**
 * Worst verdict over the run.
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_run_verdict(const struct KreinRun *run, enum KreinVerdict *out);

/**
 * Chemical potential of report `index`.
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_report_mu(const struct KreinRun *run, size_t index, double *out);

/**
 * Eigenvalue counts (lambda plane) of report `index`.
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_report_counts(const struct KreinRun *run,
                                     size_t index,
                                     struct KreinCounts *out);

/**
 * Verdict of report `index`.
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_report_verdict(const struct KreinRun *run,
                                      size_t index,
                                      enum KreinVerdict *out);

/**
 * Number of classified eigenvalues of report `index`.
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_report_eigenvalue_count(const struct KreinRun *run,
                                               size_t index,
                                               size_t *out);

/**
 * Classified eigenvalue `k` of report `index`.
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_report_eigenvalue(const struct KreinRun *run,
                                         size_t index,
                                         size_t k,
                                         struct KreinEigenvalue *out);

/**
 * Report `index` as JSON. Free the string with [`krein_string_free`].
 *
 * # Safety
 * `run` must be a valid handle and `out` a valid pointer.
 */
enum KreinStatus krein_report_json(const struct KreinRun *run, size_t index, char **out);

/**
 * Release a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void krein_string_free(char *s);

/**
 * `lambda` on the principal branch with `z = -lambda^2`.
 *
 * # Safety
 * `lambda_re` and `lambda_im` must be valid pointers.
 */
enum KreinStatus krein_map_z(double z_re, double z_im, double *lambda_re, double *lambda_im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KREIN_H */
