#ifndef DISTOBS_H
#define DISTOBS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; 0 to 4 match the exit codes of the `distobs` binary.
 */
typedef enum DistobsStatus {
  DISTOBS_STATUS_OK = 0,
  DISTOBS_STATUS_INPUT = 1,
  DISTOBS_STATUS_INFEASIBLE = 2,
  DISTOBS_STATUS_DIVERGENCE = 3,
  DISTOBS_STATUS_ORACLE_MISMATCH = 4,
  DISTOBS_STATUS_NULL_POINTER = 10,
  DISTOBS_STATUS_INVALID_UTF8 = 11,
  DISTOBS_STATUS_INVALID_ARGUMENT = 12,
  DISTOBS_STATUS_PANIC = 13,
} DistobsStatus;

/**
 * A validated problem configuration.
 */
typedef struct DistobsProblem DistobsProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses and validates a JSON configuration.
 *
 * On success `*out` receives a handle to release with [`distobs_problem_free`].
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` valid for writes.
 */
enum DistobsStatus distobs_problem_from_json(const char *json, struct DistobsProblem **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `p` must come from [`distobs_problem_from_json`] and not be used afterwards.
 */
void distobs_problem_free(struct DistobsProblem *p);

/**
 * State dimension of the plant, 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t distobs_problem_state_dim(const struct DistobsProblem *p);

/**
 * Number of agents, 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t distobs_problem_agents(const struct DistobsProblem *p);

/**
 * Classification and solvability report. `strategy` is 0 for auto, 1 or 2.
 *
 * `*out` receives the JSON report whenever one was produced, including
 * for infeasible problems.
 *
 * # Safety
 * `p` must be a live handle and `out` valid for writes.
 */
enum DistobsStatus distobs_analyze(const struct DistobsProblem *p, int32_t strategy, char **out);

/**
 * Designs the observer bank and reports its dimensions and gains.
 *
 * # Safety
 * `p` must be a live handle and `out` valid for writes.
 */
enum DistobsStatus distobs_design(const struct DistobsProblem *p, int32_t strategy, char **out);

/**
 * Runs the simulation. `seed` may be null to use the configured seed.
 *
 * # Safety
 * `p` must be a live handle, `seed` null or readable, `out` valid for writes.
 */
enum DistobsStatus distobs_simulate(const struct DistobsProblem *p,
                                    int32_t strategy,
                                    const uint64_t *seed,
                                    char **out);

/**
 * Oracle cross-check; `fuzz` extra random instances are checked with `seed`.
 *
 * # Safety
 * `p` must be a live handle and `out` valid for writes.
 */
enum DistobsStatus distobs_verify(const struct DistobsProblem *p,
                                  size_t fuzz,
                                  uint64_t seed,
                                  char **out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void distobs_string_free(char *s);

/**
 * Spectral radius of the row-major `n` x `n` matrix at `data`.
 *
 * # Safety
 * `data` must point to `n * n` doubles and `out` be valid for writes.
 */
enum DistobsStatus distobs_schur_radius(const double *data, size_t n, double *out);

/**
 * Open interval of gains k with |1 - k mu| < 1/|lambda| for every mu.
 *
 * The spectrum is passed as parallel arrays of real and imaginary parts.
 * `*empty` is set to 1 when no gain works; infinite endpoints are returned
 * as IEEE infinities.
 *
 * # Safety
 * `re` and `im` must point to `len` doubles; `lo`, `hi`, `empty` valid for writes.
 */
enum DistobsStatus distobs_feasible_gain(const double *re,
                                         const double *im,
                                         size_t len,
                                         double lambda,
                                         double *lo,
                                         double *hi,
                                         int32_t *empty);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *distobs_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTOBS_H */
