#ifndef BANDIT_CONTROL_H
#define BANDIT_CONTROL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BcStatus {
  BC_STATUS_OK = 0,
  BC_STATUS_NULL_POINTER = 1,
  BC_STATUS_INVALID_ARGUMENT = 2,
  BC_STATUS_CONFIG = 3,
  BC_STATUS_REJECTED = 4,
  BC_STATUS_NUMERICAL = 5,
  BC_STATUS_IO = 6,
  BC_STATUS_BUFFER_TOO_SMALL = 7,
  BC_STATUS_PANIC = 8,
} BcStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct BcConfig BcConfig;

/**
 * One finished `(T, seed)` run with its comparator.
 */
typedef struct BcRun BcRun;

typedef struct BcRunSummary {
  size_t horizon;
  uint64_t seed;
  size_t memory;
  size_t updates;
  double total_cost;
  double comparator_cost;
  double regret;
  /**
   * Number of violated invariants (0 for a clean run).
   */
  size_t violations;
} BcRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error of this thread into `buf` (NUL-terminated) and
 * stores the full message length, without the terminator, in `needed`.
 * Returns `BufferTooSmall` when the message had to be truncated.
 *
 * # Safety
 * `buf` must be writable for `len` bytes (or null with `len == 0`);
 * `needed` may be null.
 */
enum BcStatus bc_last_error_message(char *buf, size_t len, size_t *needed);

/**
 * Parses a TOML config; relative paths resolve against the working directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BcStatus bc_config_from_toml(const char *text, struct BcConfig **out);

/**
 * Loads a TOML config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BcStatus bc_config_load(const char *path, struct BcConfig **out);

/**
 * # Safety
 * `cfg` must come from a config constructor and not be used afterwards.
 */
void bc_config_free(struct BcConfig *cfg);

/**
 * Runs one cell of the config (any horizon and seed) and computes its
 * comparator.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
enum BcStatus bc_run_new(const struct BcConfig *cfg,
                         size_t horizon,
                         uint64_t seed,
                         struct BcRun **out);

/**
 * # Safety
 * `run` must come from [`bc_run_new`] and not be used afterwards.
 */
void bc_run_free(struct BcRun *run);

/**
 * # Safety
 * `run` must be a live run handle and `out` a valid pointer.
 */
enum BcStatus bc_run_summary(const struct BcRun *run, struct BcRunSummary *out);

/**
 * Copies the per-round costs into `out`, which must hold `len >= T` values.
 *
 * # Safety
 * `run` must be a live run handle and `out` writable for `len` doubles.
 */
enum BcStatus bc_run_costs(const struct BcRun *run, double *out, size_t len);

/**
 * Runs the full grid and writes the reports. `violations` receives the
 * number of violated invariants.
 *
 * # Safety
 * `cfg` must be a live config handle; `violations` may be null.
 */
enum BcStatus bc_run_experiment(const struct BcConfig *cfg, size_t *violations);

/**
 * Log-log least-squares slope of `regret` against `horizon`.
 *
 * # Safety
 * `horizon` and `regret` must be readable for `n` doubles; `slope` writable.
 */
enum BcStatus bc_fit_slope(const double *horizon, const double *regret, size_t n, double *slope);

/**
 * Frobenius projection of a row-major `rows x cols` matrix onto the
 * spectral-norm ball of `radius`. `input` and `output` may alias.
 *
 * # Safety
 * Both buffers must hold `rows * cols` doubles.
 */
enum BcStatus bc_project_spectral_ball(const double *input,
                                       size_t rows,
                                       size_t cols,
                                       double radius,
                                       double *output);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BANDIT_CONTROL_H */
