#ifndef OTFS_RA_H
#define OTFS_RA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum OtfsStatus {
  OTFS_STATUS_OK = 0,
  OTFS_STATUS_NULL_POINTER = 1,
  OTFS_STATUS_INVALID_ARGUMENT = 2,
  OTFS_STATUS_SHAPE = 3,
  OTFS_STATUS_NUMERIC = 4,
  OTFS_STATUS_DIVERGENCE = 5,
  OTFS_STATUS_CONFIG = 6,
  OTFS_STATUS_IO = 7,
  OTFS_STATUS_OUT_OF_RANGE = 8,
  OTFS_STATUS_PANIC = 9,
} OtfsStatus;

typedef enum OtfsAlgorithm {
  OTFS_ALGORITHM_TDSBL = 0,
  OTFS_ALGORITHM_CONV2D = 1,
  OTFS_ALGORITHM_CONV1D = 2,
  OTFS_ALGORITHM_DELTA = 3,
} OtfsAlgorithm;

// Experiment configuration handle.
typedef struct OtfsConfig OtfsConfig;

// Output of a single estimator call.
typedef struct OtfsEstimate OtfsEstimate;

// Per-trial results of one experiment run.
typedef struct OtfsResults OtfsResults;

// One per-trial record of an experiment.
typedef struct OtfsTrialRecord {
  enum OtfsAlgorithm algorithm;
  double snr_db;
  size_t n_antennas;
  double overhead;
  size_t devices;
  size_t active;
  size_t trial;
  double nmse_db;
  double pe;
  size_t iterations;
  double runtime_ms;
  uint64_t seed;
} OtfsTrialRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *otfs_last_error(void);

// Library version as a static NUL-terminated string.
const char *otfs_version(void);

// Profile defaults; `name` is `"desk"` or `"full"`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum OtfsStatus otfs_config_from_profile(const char *name, struct OtfsConfig **out);

// Parses a TOML document overlaid on its profile defaults.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum OtfsStatus otfs_config_from_toml(const char *text, struct OtfsConfig **out);

// # Safety
// `cfg` must come from this library and not be used afterwards.
void otfs_config_free(struct OtfsConfig *cfg);

// # Safety
// `cfg` must be a live configuration handle.
enum OtfsStatus otfs_config_set_trials(struct OtfsConfig *cfg, size_t trials);

// # Safety
// `cfg` must be a live configuration handle.
enum OtfsStatus otfs_config_set_seed(struct OtfsConfig *cfg, uint64_t seed);

// Replaces the SNR sweep. `+inf` requests noise-free observations.
//
// # Safety
// `snr_db` must point to `len` doubles.
enum OtfsStatus otfs_config_set_snr_db(struct OtfsConfig *cfg, const double *snr_db, size_t len);

// Replaces the antenna-count sweep; each entry must be a perfect square.
//
// # Safety
// `antennas` must point to `len` values.
enum OtfsStatus otfs_config_set_antennas(struct OtfsConfig *cfg,
                                         const size_t *antennas,
                                         size_t len);

// # Safety
// `algorithms` must point to `len` values.
enum OtfsStatus otfs_config_set_algorithms(struct OtfsConfig *cfg,
                                           const enum OtfsAlgorithm *algorithms,
                                           size_t len);

// Copies the configuration digest (16 hex characters plus NUL) into `buf`.
//
// # Safety
// `buf` must have room for `len` bytes.
enum OtfsStatus otfs_config_hash(const struct OtfsConfig *cfg, char *buf, size_t len);

// Runs the full sweep described by `cfg`.
//
// # Safety
// `cfg` must be a live configuration handle and `out` a valid pointer.
enum OtfsStatus otfs_run_experiment(const struct OtfsConfig *cfg, struct OtfsResults **out);

// # Safety
// `res` must come from this library and not be used afterwards.
void otfs_results_free(struct OtfsResults *res);

// Number of successful trial records; 0 for a null handle.
//
// # Safety
// `res` must be null or a live results handle.
size_t otfs_results_len(const struct OtfsResults *res);

// Number of trials that failed numerically; 0 for a null handle.
//
// # Safety
// `res` must be null or a live results handle.
size_t otfs_results_failures(const struct OtfsResults *res);

// # Safety
// `res` must be a live results handle and `out` a valid pointer.
enum OtfsStatus otfs_results_get(const struct OtfsResults *res,
                                 size_t index,
                                 struct OtfsTrialRecord *out);

// Writes the per-trial CSV at `path` and the JSON sidecar beside it.
//
// # Safety
// Handles must be live and `path` a NUL-terminated string.
enum OtfsStatus otfs_results_export(const struct OtfsResults *res,
                                    const struct OtfsConfig *cfg,
                                    const char *path);

// Runs one estimator on an explicit sensing matrix.
//
// `x` is `rows × cols` and `y` is `rows × y_cols`, both interleaved complex
// and column-major; `cols` must be a multiple of `devices`. Estimator
// settings come from `cfg`, or the desk defaults when `cfg` is null.
// Numerical failures inside the iteration do not fail the call: the
// estimate keeps the last good iterate and reports them through
// [`otfs_estimate_stopped`].
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum OtfsStatus otfs_estimate(enum OtfsAlgorithm algorithm,
                              const double *x,
                              size_t rows,
                              size_t cols,
                              const double *y,
                              size_t y_cols,
                              size_t devices,
                              uint64_t seed,
                              const struct OtfsConfig *cfg,
                              struct OtfsEstimate **out);

// # Safety
// `est` must come from this library and not be used afterwards.
void otfs_estimate_free(struct OtfsEstimate *est);

// Shape of the channel estimate and number of devices.
//
// # Safety
// `est` must be a live estimate handle; output pointers may be null.
enum OtfsStatus otfs_estimate_shape(const struct OtfsEstimate *est,
                                    size_t *rows,
                                    size_t *cols,
                                    size_t *devices);

// Copies `Ĥ` as interleaved complex, column-major; `len` counts doubles.
//
// # Safety
// `buf` must have room for `len` doubles.
enum OtfsStatus otfs_estimate_channel(const struct OtfsEstimate *est, double *buf, size_t len);

// Copies the per-device activity decisions as 0/1 bytes.
//
// # Safety
// `buf` must have room for `len` bytes.
enum OtfsStatus otfs_estimate_activity(const struct OtfsEstimate *est, uint8_t *buf, size_t len);

// Iterations run; 0 for a null handle.
//
// # Safety
// `est` must be null or a live estimate handle.
size_t otfs_estimate_iterations(const struct OtfsEstimate *est);

// 1 when the stopping tolerance was met.
//
// # Safety
// `est` must be null or a live estimate handle.
int32_t otfs_estimate_converged(const struct OtfsEstimate *est);

// 1 when a numerical failure ended the iteration early. The reason is then
// available from [`otfs_last_error`].
//
// # Safety
// `est` must be null or a live estimate handle.
int32_t otfs_estimate_stopped(const struct OtfsEstimate *est);

// Cross-checks the time-domain chain against the delay-Doppler relation on
// random instances and reports the worst and mean relative error.
//
// # Safety
// Output pointers must be valid.
enum OtfsStatus otfs_oracle_check(size_t instances,
                                  uint64_t seed,
                                  double *max_rel_error,
                                  double *mean_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTFS_RA_H */
