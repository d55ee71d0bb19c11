#ifndef ISODEFEAT_H
#define ISODEFEAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a defeaturing run.
typedef enum IsoRunStatus {
  ISO_RUN_STATUS_CONVERGED = 0,
  ISO_RUN_STATUS_MAX_ITERATIONS = 1,
} IsoRunStatus;

// Side of the parametric square; passed to the library as an `int32_t`.
typedef enum IsoSide {
  ISO_SIDE_SOUTH = 0,
  ISO_SIDE_EAST = 1,
  ISO_SIDE_NORTH = 2,
  ISO_SIDE_WEST = 3,
} IsoSide;

// Result code of every fallible call.
typedef enum IsoStatus {
  ISO_STATUS_OK = 0,
  // A required pointer argument was null.
  ISO_STATUS_NULL_ARGUMENT = 1,
  // Text was not valid UTF-8, or an index or enum value was out of range.
  ISO_STATUS_INVALID_ARGUMENT = 2,
  // Problem file or setting rejected.
  ISO_STATUS_CONFIG = 3,
  ISO_STATUS_IO = 4,
  // Newton, linear solver or fit failure.
  ISO_STATUS_NUMERICAL = 5,
  // Parameterization could not be certified or the boundary fit self-intersects.
  ISO_STATUS_GEOMETRY = 6,
  // Output buffer too small; the required length was written.
  ISO_STATUS_BUFFER_TOO_SMALL = 7,
  ISO_STATUS_PANIC = 8,
} IsoStatus;

// Problem definition handle.
typedef struct IsoProblem IsoProblem;

// Completed run handle.
typedef struct IsoRun IsoRun;

// Reference value on the accurate boundary representation.
typedef struct IsoReference {
  double value;
  size_t boundary_dofs;
  size_t analysis_dofs;
} IsoReference;

// One row of the run record.
typedef struct IsoIteration {
  size_t n;
  size_t dofs;
  size_t boundary_dofs;
  double value;
  double estimator;
  size_t marked;
  size_t apos_rounds;
  size_t newton_steps;
  // Wall-clock seconds of the whole iteration.
  double seconds;
} IsoIteration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failing call.
const char *iso_last_error(void);

// Library version as a static NUL-terminated string.
const char *iso_version(void);

// Built-in problem by name (`"flag"`).
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be valid for a write.
enum IsoStatus iso_problem_preset(const char *name, struct IsoProblem **out);

// Parses a problem from TOML text.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be valid for a write.
enum IsoStatus iso_problem_parse(const char *toml, struct IsoProblem **out);

// Loads a problem file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for a write.
enum IsoStatus iso_problem_load(const char *path, struct IsoProblem **out);

// # Safety
// `problem` must come from this library and not be used afterwards; null is ignored.
void iso_problem_free(struct IsoProblem *problem);

// Overrides the run settings; NaN (or 0 for `max_iters`, a negative `state_depth`) keeps the
// current value. `epsilon` may be `+∞` to stop after the first iteration.
//
// # Safety
// `problem` must be a live handle.
enum IsoStatus iso_problem_set_run(struct IsoProblem *problem,
                                   double alpha,
                                   double epsilon,
                                   size_t max_iters,
                                   int32_t state_depth);

// Boundary fit weights `κ0`, `κ1`.
//
// # Safety
// `problem` must be a live handle.
enum IsoStatus iso_problem_set_fit_weights(struct IsoProblem *problem,
                                           double kappa0,
                                           double kappa1);

// Writes the problem as TOML into `buf` (NUL-terminated). `len` receives the byte count
// including the terminator; with a null or short buffer only `len` is written.
//
// # Safety
// `buf` must be valid for `cap` bytes or null; `len` must be valid for a write.
enum IsoStatus iso_problem_to_toml(const struct IsoProblem *problem,
                                   char *buf,
                                   size_t cap,
                                   size_t *len);

// Solves on the problem's reference boundary representation.
//
// # Safety
// `problem` must be a live handle; `out` must be valid for a write.
enum IsoStatus iso_reference(const struct IsoProblem *problem, struct IsoReference *out);

// Runs the defeaturing loop. On failure no handle is produced and the message names the
// iteration reached.
//
// # Safety
// `problem` must be a live handle; `out` must be valid for a write.
enum IsoStatus iso_defeature(const struct IsoProblem *problem, struct IsoRun **out);

// # Safety
// `run` must come from this library and not be used afterwards; null is ignored.
void iso_run_free(struct IsoRun *run);

// # Safety
// `run` must be a live handle; `out` must be valid for a write.
enum IsoStatus iso_run_status(const struct IsoRun *run, enum IsoRunStatus *out);

// Number of iterations in the run record.
//
// # Safety
// `run` must be a live handle; `out` must be valid for a write.
enum IsoStatus iso_run_iterations(const struct IsoRun *run, size_t *out);

// Row `n` of the run record.
//
// # Safety
// `run` must be a live handle; `out` must be valid for a write.
enum IsoStatus iso_run_iteration(const struct IsoRun *run, size_t n, struct IsoIteration *out);

// Control points of the final map as interleaved `x, y` pairs. `len` receives the number of
// points; with a null buffer or `cap` (in points) too small only `len` is written.
//
// # Safety
// `xy` must be valid for `2 cap` doubles or null; `len` must be valid for a write.
enum IsoStatus iso_run_control_points(const struct IsoRun *run,
                                      double *xy,
                                      size_t cap,
                                      size_t *len);

// Point of the final boundary curve on `side` (an [`IsoSide`] value) at `t ∈ [0, 1]`.
//
// # Safety
// `run` must be a live handle; `x`, `y` must be valid for writes.
enum IsoStatus iso_run_boundary_point(const struct IsoRun *run,
                                      int32_t side,
                                      double t,
                                      double *x,
                                      double *y);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISODEFEAT_H */
