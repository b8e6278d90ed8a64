/* C interface for the arp adaptive regularization solver. */

#ifndef ARP_CAPI_H
#define ARP_CAPI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum ArpStatus {
  ARP_STATUS_OK = 0,
  ARP_STATUS_NULL_ARGUMENT = 1,
  ARP_STATUS_INVALID_UTF8 = 2,
  ARP_STATUS_CONFIG_ERROR = 3,
  ARP_STATUS_UNKNOWN_PROBLEM = 4,
  ARP_STATUS_INNER_SOLVER_FAILURE = 5,
  ARP_STATUS_RUNTIME_ERROR = 6,
  ARP_STATUS_PANIC = 7,
} ArpStatus;

// Termination states mirrored from the solver.
typedef enum ArpTermination {
  ARP_TERMINATION_CONVERGED = 0,
  ARP_TERMINATION_BUDGET_EXHAUSTED = 1,
  ARP_TERMINATION_INNER_FAILURE = 2,
} ArpTermination;

// Opaque configuration handle.
typedef struct ArpConfig ArpConfig;

// Opaque problem handle.
typedef struct ArpProblem ArpProblem;

// Opaque run-result handle.
typedef struct ArpRunResult ArpRunResult;

// Most recent error message on this thread, or NULL when none occurred.
// The caller owns the returned string (free with [`arp_string_free`]).
char *arp_last_error_message(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must have been returned by a function in this library (other than
// `arp_version`) and not freed before.
void arp_string_free(char *s);

// Static library version string; do not free.
const char *arp_version(void);

// Creates a problem from its name (e.g. `quartic:10`); `data_path` may be
// NULL and is only consulted by finite-sum problems.
//
// # Safety
// `name` (and `data_path` when non-NULL) must point to NUL-terminated
// strings; `out` must be a valid pointer.
enum ArpStatus arp_problem_new(const char *name, const char *data_path, struct ArpProblem **out);

// Problem dimension (0 for NULL).
//
// # Safety
// `problem` must be NULL or a live handle from [`arp_problem_new`].
size_t arp_problem_dim(const struct ArpProblem *problem);

// # Safety
// `problem` must come from [`arp_problem_new`] and not be freed twice.
void arp_problem_free(struct ArpProblem *problem);

// Default configuration handle.
//
// # Safety
// `out` must be a valid pointer.
enum ArpStatus arp_config_default(struct ArpConfig **out);

// Parses a configuration from the same sectioned `key = value` text the
// CLI accepts (the `[sweep]` section is ignored here).
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be a valid pointer.
enum ArpStatus arp_config_parse(const char *text, struct ArpConfig **out);

// # Safety
// `config` must come from a config constructor and not be freed twice.
void arp_config_free(struct ArpConfig *config);

// Runs the solver from `x0` (length `x0_len`, which must equal the
// problem dimension).
//
// # Safety
// `problem` and `config` must be live handles; `x0` must point to
// `x0_len` readable doubles; `out` must be a valid pointer.
enum ArpStatus arp_run(const struct ArpProblem *problem,
                       const struct ArpConfig *config,
                       const double *x0,
                       size_t x0_len,
                       struct ArpRunResult **out);

// First iteration at which the stopping test held, or −1 when it never
// did (or for NULL).
//
// # Safety
// `result` must be NULL or a live handle from [`arp_run`].
int64_t arp_result_n_epsilon(const struct ArpRunResult *result);

// Number of executed iterations (trace length); 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle from [`arp_run`].
size_t arp_result_iterations(const struct ArpRunResult *result);

// Termination state as [`ArpTermination`]; −1 for NULL.
//
// # Safety
// `result` must be NULL or a live handle from [`arp_run`].
int arp_result_termination(const struct ArpRunResult *result);

// Dimension of the final point; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle from [`arp_run`].
size_t arp_result_dim(const struct ArpRunResult *result);

// Copies the final point into `buf` (capacity `len` ≥ the result
// dimension).
//
// # Safety
// `buf` must point to `len` writable doubles.
enum ArpStatus arp_result_final_point(const struct ArpRunResult *result, double *buf, size_t len);

// Counted derivative-bundle evaluations; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle from [`arp_run`].
uint64_t arp_result_deriv_evals(const struct ArpRunResult *result);

// Counted function estimates; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle from [`arp_run`].
uint64_t arp_result_f_evals(const struct ArpRunResult *result);

// Per-iteration trace as JSON lines; caller frees with
// [`arp_string_free`]. NULL on failure.
//
// # Safety
// `result` must be NULL or a live handle from [`arp_run`].
char *arp_result_trace_json(const struct ArpRunResult *result);

// # Safety
// `result` must come from [`arp_run`] and not be freed twice.
void arp_result_free(struct ArpRunResult *result);

#endif  /* ARP_CAPI_H */
