#ifndef PWNN_H
#define PWNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum PwnnStatus {
  PWNN_STATUS_OK = 0,
  PWNN_STATUS_NULL_POINTER = 1,
  PWNN_STATUS_INVALID_ARGUMENT = 2,
  PWNN_STATUS_UNKNOWN_PROBLEM = 3,
  PWNN_STATUS_DIVERGENCE = 4,
  PWNN_STATUS_DOMAIN = 5,
  PWNN_STATUS_IO = 6,
  PWNN_STATUS_UNAVAILABLE = 7,
  PWNN_STATUS_PANIC = 8,
  PWNN_STATUS_INTERNAL = 9,
} PwnnStatus;

// Opaque problem handle.
typedef struct PwnnProblem PwnnProblem;

// Opaque trained (or loaded) piecewise solution.
typedef struct PwnnSolution PwnnSolution;

// Training options. Obtain defaults from `pwnn_options_default`.
typedef struct PwnnOptions {
  size_t segments;
  // Hidden layer widths; `hidden_len` entries, at most 8 used.
  size_t hidden[8];
  size_t hidden_len;
  // Learning rate per round; `learning_rates_len` entries, at most 8 used.
  double learning_rates[8];
  size_t learning_rates_len;
  size_t max_iterations;
  size_t points;
  size_t rounds;
  uint64_t seed;
  double epsilon;
  // Nonzero maps each segment onto [-1, 1] before the first layer.
  int32_t normalize_input;
} PwnnOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *pwnn_last_error_message(void);

// Looks up a built-in problem by name.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a writable pointer.
enum PwnnStatus pwnn_problem_from_name(const char *name, struct PwnnProblem **out);

// State dimension, or 0 for a null handle.
//
// # Safety
// `problem` must be null or a live handle.
size_t pwnn_problem_dim(const struct PwnnProblem *problem);

// Right end of the interval, or NaN for a null handle.
//
// # Safety
// `problem` must be null or a live handle.
double pwnn_problem_t_end(const struct PwnnProblem *problem);

// # Safety
// `problem` must be null or a handle not yet freed.
void pwnn_problem_free(struct PwnnProblem *problem);

// RK4 with step `h` evaluated at `n` points in `[0, T]`; writes `n * dim`
// values row by row into `out`.
//
// # Safety
// `xs` must hold `n` values and `out` room for `n * dim`.
enum PwnnStatus pwnn_rk4(const struct PwnnProblem *problem,
                         double h,
                         const double *xs,
                         size_t n,
                         double *out);

// Library defaults: 1 segment, 20x20 tanh, lr 0.01, 10000 iterations,
// 100 points, 1 round, seed 0, normalized input.
struct PwnnOptions pwnn_options_default(void);

// Trains a piecewise solution. On divergence nothing is written to `out`.
//
// # Safety
// `problem` must be a live handle, `options` null (defaults) or valid,
// and `out` writable.
enum PwnnStatus pwnn_solve(const struct PwnnProblem *problem,
                           const struct PwnnOptions *options,
                           struct PwnnSolution **out);

// Loads a solution written by `pwnn_solution_save` or the CLI.
//
// # Safety
// `dir` must be a NUL-terminated path and `out` writable.
enum PwnnStatus pwnn_solution_load(const char *dir, struct PwnnSolution **out);

// # Safety
// `solution` must be a live handle and `dir` a NUL-terminated path.
enum PwnnStatus pwnn_solution_save(const struct PwnnSolution *solution, const char *dir);

// Output dimension, or 0 for a null handle.
//
// # Safety
// `solution` must be null or a live handle.
size_t pwnn_solution_dim(const struct PwnnSolution *solution);

// Segment count, or 0 for a null handle.
//
// # Safety
// `solution` must be null or a live handle.
size_t pwnn_solution_segments(const struct PwnnSolution *solution);

// Writes `dim` values of the piecewise solution at `x` into `out`.
//
// # Safety
// `solution` must be a live handle and `out` hold `dim` values.
enum PwnnStatus pwnn_solution_evaluate(const struct PwnnSolution *solution, double x, double *out);

// Final total loss of 1-based `segment` after 1-based `round`. Only
// available for solutions produced by `pwnn_solve`.
//
// # Safety
// `solution` must be a live handle and `out` writable.
enum PwnnStatus pwnn_solution_final_loss(const struct PwnnSolution *solution,
                                         size_t round,
                                         size_t segment,
                                         double *out);

// # Safety
// `solution` must be null or a handle not yet freed.
void pwnn_solution_free(struct PwnnSolution *solution);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PWNN_H */
