#ifndef DIRACGRAPH_H
#define DIRACGRAPH_H

#pragma once

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Operator selector for [`dg_spectrum`].
 */
typedef enum DgOperator {
  DG_OPERATOR_DIRAC = 0,
  DG_OPERATOR_LAPLACIAN = 1,
} DgOperator;

/**
 * Status codes; the nonzero ones equal the CLI exit codes.
 */
typedef enum DgStatus {
  DG_STATUS_OK = 0,
  DG_STATUS_IO = 1,
  DG_STATUS_VALIDATION = 2,
  DG_STATUS_PARSE = 3,
  DG_STATUS_SOLVER = 4,
  DG_STATUS_INVARIANT = 5,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  DG_STATUS_INVALID_ARGUMENT = 6,
  /**
   * The caller's buffer is too small; the required length was written.
   */
  DG_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * A panic was caught at the boundary.
   */
  DG_STATUS_INTERNAL = 8,
} DgStatus;

typedef struct DgGraph DgGraph;

typedef struct DgNldState DgNldState;

typedef struct DgNlsState DgNlsState;

/**
 * Newton controls; see [`dg_solver_options_default`].
 */
typedef struct DgSolverOptions {
  double tol;
  uint32_t max_iter;
  bool damping;
} DgSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *dg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dg_version(void);

struct DgSolverOptions dg_solver_options_default(void);

/**
 * Parses graph text (the `.graph` format) into a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DgStatus dg_graph_parse(const char *text, struct DgGraph **out);

/**
 * # Safety
 * `graph` must come from [`dg_graph_parse`] and not be used afterwards.
 */
void dg_graph_free(struct DgGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle.
 */
size_t dg_graph_vertex_count(const struct DgGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle.
 */
size_t dg_graph_bounded_edge_count(const struct DgGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle.
 */
size_t dg_graph_halfline_count(const struct DgGraph *graph);

/**
 * Up to `count` eigenvalues in `[lo, hi]` nearest the window centre, in
 * increasing order. Half-lines are truncated at `l_inf`. `values` needs room
 * for `count` entries; the number found is stored in `found`.
 *
 * # Safety
 * `graph` must be a live handle, `values` must hold `count` doubles and
 * `found` must be valid.
 */
enum DgStatus dg_spectrum(const struct DgGraph *graph,
                          enum DgOperator op,
                          double m,
                          double c,
                          double h,
                          double l_inf,
                          double lo,
                          double hi,
                          size_t count,
                          double *values,
                          size_t *found);

/**
 * Ground state of the NLS problem on `graph` at frequency `lambda < 0`.
 * A NaN `alpha` selects the default `2m`.
 *
 * # Safety
 * `graph` must be a live handle and `out` valid.
 */
enum DgStatus dg_nls_solve(const struct DgGraph *graph,
                           double m,
                           double lambda,
                           double p,
                           double alpha,
                           double h,
                           struct DgSolverOptions opts,
                           struct DgNlsState **out);

/**
 * # Safety
 * `state` must come from [`dg_nls_solve`] and not be used afterwards.
 */
void dg_nls_free(struct DgNlsState *state);

/**
 * Residual, functional value and core mass, in that order.
 *
 * # Safety
 * `state` must be a live handle; each output may be null.
 */
enum DgStatus dg_nls_summary(const struct DgNlsState *state,
                             double *residual,
                             double *functional,
                             double *core_mass);

/**
 * Node values as CSV, written with the size protocol of the `_csv`
 * functions: `len` receives the needed size; the text is copied only if
 * `cap` suffices.
 *
 * # Safety
 * `state` must be a live handle, `buf` must hold `cap` bytes (or be null)
 * and `len` must be valid.
 */
enum DgStatus dg_nls_csv(const struct DgNlsState *state, char *buf, size_t cap, size_t *len);

/**
 * NLD bound state at frequency `omega` inside the gap, started from the
 * lifted NLS profile at `lambda = 2m(omega − mc²)`.
 *
 * # Safety
 * `graph` must be a live handle and `out` valid.
 */
enum DgStatus dg_nld_solve(const struct DgGraph *graph,
                           double m,
                           double c,
                           double omega,
                           double p,
                           double h,
                           struct DgSolverOptions opts,
                           struct DgNldState **out);

/**
 * # Safety
 * `state` must come from [`dg_nld_solve`] and not be used afterwards.
 */
void dg_nld_free(struct DgNldState *state);

/**
 * Residual, action, core mass and relative virial error.
 *
 * # Safety
 * `state` must be a live handle; each output may be null.
 */
enum DgStatus dg_nld_summary(const struct DgNldState *state,
                             double *residual,
                             double *action,
                             double *core_mass,
                             double *virial);

/**
 * Spinor values as CSV; same size protocol as [`dg_nls_csv`].
 *
 * # Safety
 * As for [`dg_nls_csv`].
 */
enum DgStatus dg_nld_csv(const struct DgNldState *state, char *buf, size_t cap, size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIRACGRAPH_H */
