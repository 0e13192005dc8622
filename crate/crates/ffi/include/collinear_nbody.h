#ifndef COLLINEAR_NBODY_H
#define COLLINEAR_NBODY_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CnbCollisionMode {
  CNB_COLLISION_MODE_REGULARIZED = 0,
  CNB_COLLISION_MODE_BOUNCE = 1,
} CnbCollisionMode;

typedef enum CnbStatus {
  CNB_STATUS_OK = 0,
  /**
   * A checked property failed.
   */
  CNB_STATUS_VERIFICATION_FAILED = 1,
  /**
   * Invalid arguments or problem definition.
   */
  CNB_STATUS_INVALID_INPUT = 2,
  CNB_STATUS_NOT_CONVERGED = 3,
  CNB_STATUS_NON_REGULARIZABLE = 4,
  CNB_STATUS_NULL_POINTER = 5,
  /**
   * The output buffer is too small.
   */
  CNB_STATUS_BUFFER_TOO_SMALL = 6,
  CNB_STATUS_INTERNAL = 7,
} CnbStatus;

/**
 * Verification report.
 */
typedef struct CnbReport CnbReport;

/**
 * Minimizer output together with its problem.
 */
typedef struct CnbSolution CnbSolution;

/**
 * Problem definition.
 */
typedef struct CnbSpec CnbSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failed call on this thread into `buf`,
 * NUL-terminated and truncated to `len`. Returns the bytes needed
 * including the terminator.
 */
size_t cnb_last_error(char *buf, size_t len);

/**
 * Creates a problem. `sigma` holds the one-based images `σ(1), ..., σ(n)`
 * or is null for the identity.
 */
enum CnbStatus cnb_spec_new(size_t n,
                            const double *masses,
                            double half_period,
                            const size_t *sigma,
                            bool symmetric,
                            struct CnbSpec **out);

void cnb_spec_free(struct CnbSpec *spec);

/**
 * Minimizes the action. `schedule` may be null (default meshes). A
 * solution is returned even when the minimizer did not converge; the
 * status is then `CNB_STATUS_NOT_CONVERGED`.
 */
enum CnbStatus cnb_solve(const struct CnbSpec *spec,
                         const size_t *schedule,
                         size_t schedule_len,
                         uint64_t seed,
                         struct CnbSolution **out);

void cnb_solution_free(struct CnbSolution *solution);

/**
 * Total action, converged flag, body count and cell count; any output
 * pointer may be null.
 */
enum CnbStatus cnb_solution_info(const struct CnbSolution *solution,
                                 double *action,
                                 bool *converged,
                                 size_t *n,
                                 size_t *cells);

/**
 * Mesh times, `cells + 1` values.
 */
enum CnbStatus cnb_solution_times(const struct CnbSolution *solution,
                                  double *buf,
                                  size_t len,
                                  size_t *needed);

/**
 * Node positions in original labels, `(cells + 1) * n` values.
 */
enum CnbStatus cnb_solution_positions(const struct CnbSolution *solution,
                                      double *buf,
                                      size_t len,
                                      size_t *needed);

/**
 * Writes the solution file (UTF-8 path).
 */
enum CnbStatus cnb_solution_save(const struct CnbSolution *solution, const char *path);

/**
 * Integrates one period from `T/2` and writes the periodicity defect.
 */
enum CnbStatus cnb_periodicity_defect(const struct CnbSolution *solution,
                                      enum CnbCollisionMode mode,
                                      double *defect);

/**
 * Runs every check with default tolerances. The report is returned in
 * `out` also when a check fails; the status is then `CNB_STATUS_VERIFICATION_FAILED`.
 */
enum CnbStatus cnb_verify(const struct CnbSolution *solution, struct CnbReport **out);

void cnb_report_free(struct CnbReport *report);

/**
 * Number of check records.
 */
size_t cnb_report_len(const struct CnbReport *report);

/**
 * Record `index`: pass flag, margin and tolerance; any output may be null.
 */
enum CnbStatus cnb_report_check(const struct CnbReport *report,
                                size_t index,
                                bool *pass,
                                double *margin,
                                double *tolerance);

/**
 * Name of record `index`; returns the bytes needed including the
 * terminator, or 0 for a bad index.
 */
size_t cnb_report_check_name(const struct CnbReport *report, size_t index, char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLLINEAR_NBODY_H */
