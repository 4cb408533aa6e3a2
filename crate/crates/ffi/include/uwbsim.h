#ifndef UWBSIM_H
#define UWBSIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UwbStatus {
  UWB_STATUS_OK = 0,
  UWB_STATUS_NULL_POINTER = 1,
  UWB_STATUS_INVALID_ARGUMENT = 2,
  UWB_STATUS_RUNTIME = 3,
  UWB_STATUS_IO = 4,
  UWB_STATUS_PANIC = 5,
} UwbStatus;

typedef enum UwbMode {
  UWB_MODE_CS_UWB = 0,
  UWB_MODE_OMP = 1,
  UWB_MODE_BP = 2,
  UWB_MODE_BCS = 3,
  UWB_MODE_SEQUENTIAL = 4,
} UwbMode;

typedef enum UwbExperimentKind {
  UWB_EXPERIMENT_KIND_RECON1D = 0,
  UWB_EXPERIMENT_KIND_GRID2D = 1,
  UWB_EXPERIMENT_KIND_ROOM3D = 2,
} UwbExperimentKind;

/**
 * An experiment configuration, adjusted key by key and then run.
 */
typedef struct UwbExperiment UwbExperiment;

/**
 * A positioning pipeline with fixed anchors and station hardware.
 */
typedef struct UwbPipeline UwbPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *uwb_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full length including
 * the terminator, so a too-small buffer can be retried.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t uwb_last_error(char *buf, size_t len);

/**
 * Builds a pipeline with default settings for the given anchors and mode.
 *
 * # Safety
 * `anchors` must hold `3 * count` doubles; `out` must be writable.
 */
enum UwbStatus uwb_pipeline_new(const double *anchors,
                                size_t count,
                                uint32_t dim,
                                enum UwbMode mode,
                                uint64_t seed,
                                struct UwbPipeline **out);

/**
 * Simulates one fix of a tag at `tag` (x, y, z in mm; z ignored in 2D).
 * `trial` selects the channel and noise realisation.
 *
 * # Safety
 * `pipeline` must come from [`uwb_pipeline_new`]; `tag` must hold 3 doubles;
 * `out_position` 3 writable doubles; `out_error_mm` may be null.
 */
enum UwbStatus uwb_pipeline_locate(const struct UwbPipeline *pipeline,
                                   const double *tag,
                                   uint64_t trial,
                                   double *out_position,
                                   double *out_error_mm);

/**
 * # Safety
 * `pipeline` must be null or come from [`uwb_pipeline_new`], freed once.
 */
void uwb_pipeline_free(struct UwbPipeline *pipeline);

/**
 * Solves for the tag position from `count - 1` time differences
 * `tau[k] = t_0 - t_{k+1}` (seconds; anchor 0 is the reference) with
 * propagation speed `c` (mm/s).
 *
 * # Safety
 * `anchors` must hold `3 * count` doubles, `tau` `count - 1` doubles,
 * `out_position` 3 writable doubles; `out_iterations` may be null.
 */
enum UwbStatus uwb_tdoa_solve(const double *anchors,
                              size_t count,
                              uint32_t dim,
                              const double *tau,
                              double c,
                              double *out_position,
                              uint32_t *out_iterations);

/**
 * Creates an experiment with its default settings.
 *
 * # Safety
 * `out` must be writable.
 */
enum UwbStatus uwb_experiment_new(enum UwbExperimentKind kind, struct UwbExperiment **out);

/**
 * Sets one configuration key, using the same keys and value syntax as the
 * command line and config files.
 *
 * # Safety
 * `experiment` must come from [`uwb_experiment_new`]; strings must be
 * NUL-terminated UTF-8.
 */
enum UwbStatus uwb_experiment_set(struct UwbExperiment *experiment,
                                  const char *key,
                                  const char *value);

/**
 * Validates, runs the experiment and writes the result table as CSV to
 * `csv_path` (replaced atomically).
 *
 * # Safety
 * `experiment` must come from [`uwb_experiment_new`]; `csv_path` must be a
 * NUL-terminated UTF-8 path.
 */
enum UwbStatus uwb_experiment_run(const struct UwbExperiment *experiment, const char *csv_path);

/**
 * # Safety
 * `experiment` must be null or come from [`uwb_experiment_new`], freed once.
 */
void uwb_experiment_free(struct UwbExperiment *experiment);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UWBSIM_H */
