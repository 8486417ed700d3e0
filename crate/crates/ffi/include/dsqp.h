#ifndef DSQP_H
#define DSQP_H

/* Generated by cbindgen from the dsqp-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsqpStatus {
  DSQP_STATUS_OK = 0,
  DSQP_STATUS_NULL_POINTER = 1,
  DSQP_STATUS_INVALID_ARGUMENT = 2,
  DSQP_STATUS_UNKNOWN_PROBLEM = 3,
  DSQP_STATUS_CONFIG_ERROR = 4,
  DSQP_STATUS_SOLVE_FAILED = 5,
  DSQP_STATUS_BUFFER_TOO_SMALL = 6,
  DSQP_STATUS_PANIC = 7,
} DsqpStatus;

typedef enum DsqpSchedule {
  DSQP_SCHEDULE_CONSTANT = 0,
  DSQP_SCHEDULE_GEOMETRIC = 1,
  DSQP_SCHEDULE_RESIDUAL = 2,
} DsqpSchedule;

typedef enum DsqpMethod {
  DSQP_METHOD_DECENTRALIZED = 0,
  DSQP_METHOD_BASELINE = 1,
} DsqpMethod;

typedef enum DsqpSolveStatus {
  DSQP_SOLVE_STATUS_CONVERGED = 0,
  DSQP_SOLVE_STATUS_OUTER_LIMIT = 1,
  DSQP_SOLVE_STATUS_INNER_STALL = 2,
  DSQP_SOLVE_STATUS_EVALUATION_FAILURE = 3,
  DSQP_SOLVE_STATUS_LINEARIZATION_FAILURE = 4,
} DsqpSolveStatus;

typedef struct DsqpConfig DsqpConfig;

/**
 * A library problem with its default start.
 */
typedef struct DsqpProblem DsqpProblem;

typedef struct DsqpResult DsqpResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failed call on this thread, or NULL. The
 * pointer stays valid until the next dsqp call on the same thread.
 */
const char *dsqp_last_error_message(void);

/**
 * Loads a library problem ("P1", "P2", "net3" or "custom").
 *
 * # Safety
 * `name` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum DsqpStatus dsqp_problem_load(const char *name, uint64_t seed, struct DsqpProblem **out);

/**
 * # Safety
 * `problem` must come from `dsqp_problem_load` and not be used afterwards.
 */
void dsqp_problem_free(struct DsqpProblem *problem);

/**
 * Total number of primal variables.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DsqpStatus dsqp_problem_num_vars(const struct DsqpProblem *problem, size_t *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum DsqpStatus dsqp_problem_num_subsystems(const struct DsqpProblem *problem, size_t *out);

/**
 * Number of coupling rows.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DsqpStatus dsqp_problem_num_coupling(const struct DsqpProblem *problem, size_t *out);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DsqpStatus dsqp_config_new(struct DsqpConfig **out);

/**
 * # Safety
 * `config` must come from `dsqp_config_new` and not be used afterwards.
 */
void dsqp_config_free(struct DsqpConfig *config);

/**
 * `param` is the decay factor for `Geometric`, the scale for `Residual` and
 * ignored for `Constant`.
 *
 * # Safety
 * `config` must be valid.
 */
enum DsqpStatus dsqp_config_set_schedule(struct DsqpConfig *config,
                                         enum DsqpSchedule kind,
                                         double param);

/**
 * # Safety
 * `config` must be valid.
 */
enum DsqpStatus dsqp_config_set_eta0(struct DsqpConfig *config, double eta0);

/**
 * # Safety
 * `config` must be valid.
 */
enum DsqpStatus dsqp_config_set_rho(struct DsqpConfig *config, double rho);

/**
 * Outer tolerance on the KKT residual.
 *
 * # Safety
 * `config` must be valid.
 */
enum DsqpStatus dsqp_config_set_tolerance(struct DsqpConfig *config, double eps);

/**
 * # Safety
 * `config` must be valid.
 */
enum DsqpStatus dsqp_config_set_iteration_limits(struct DsqpConfig *config,
                                                 size_t outer,
                                                 size_t inner);

/**
 * Solves `problem` from its default start. `config` may be NULL for defaults.
 * A result is produced for every finished run, converged or not.
 *
 * # Safety
 * Non-null pointers must be valid; `out` must be valid.
 */
enum DsqpStatus dsqp_solve(const struct DsqpProblem *problem,
                           const struct DsqpConfig *config,
                           enum DsqpMethod method,
                           struct DsqpResult **out);

/**
 * # Safety
 * `result` must come from `dsqp_solve` and not be used afterwards.
 */
void dsqp_result_free(struct DsqpResult *result);

/**
 * # Safety
 * Pointers must be valid.
 */
enum DsqpStatus dsqp_result_status(const struct DsqpResult *result, enum DsqpSolveStatus *out);

/**
 * Outer and total inner iteration counts.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DsqpStatus dsqp_result_iterations(const struct DsqpResult *result,
                                       size_t *outer,
                                       size_t *inner);

/**
 * Final `‖F‖∞`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DsqpStatus dsqp_result_residual(const struct DsqpResult *result, double *out);

/**
 * Total floats exchanged between neighbors.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DsqpStatus dsqp_result_floats_sent(const struct DsqpResult *result, size_t *out);

/**
 * Copies the stacked final primal point into `buf`. `needed` (optional)
 * receives the required length; `BufferTooSmall` is returned when `len` is
 * short, in which case nothing is written to `buf`.
 *
 * # Safety
 * `buf` must hold `len` doubles unless `len` is 0; other pointers valid or NULL.
 */
enum DsqpStatus dsqp_result_primal(const struct DsqpResult *result,
                                   double *buf,
                                   size_t len,
                                   size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSQP_H */
