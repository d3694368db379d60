#ifndef LABP_H
#define LABP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LabpBoundary {
  LABP_BOUNDARY_OUTGOING = 0,
  LABP_BOUNDARY_INCOMING = 1,
  LABP_BOUNDARY_DIRICHLET = 2,
} LabpBoundary;

typedef enum LabpBranch {
  // `λ + iε`.
  LABP_BRANCH_PLUS = 0,
  // `λ - iε`.
  LABP_BRANCH_MINUS = 1,
} LabpBranch;

typedef enum LabpStatus {
  LABP_STATUS_OK = 0,
  LABP_STATUS_INVALID_ARGUMENT = 1,
  LABP_STATUS_NULL_POINTER = 2,
  LABP_STATUS_SINGULAR = 3,
  LABP_STATUS_NUMERICAL = 4,
  LABP_STATUS_IO = 5,
  LABP_STATUS_PANIC = 6,
} LabpStatus;

// Opaque radial grid.
typedef struct LabpGrid LabpGrid;

// Opaque mode solution together with its unreduced source.
typedef struct LabpSolution LabpSolution;

typedef struct LabpGauge {
  double lhs;
  double rhs_factor;
  double ratio;
  double raw_ratio;
} LabpGauge;

typedef struct LabpFit {
  double slope;
  double intercept;
  double r2;
} LabpFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated, truncated to `len`).
//
// Returns the full message length excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t labp_last_error_message(char *buf, size_t len);

// Static NUL-terminated version string.
const char *labp_version(void);

// Uniform grid of `n` nodes on `[r_min, r_max]`.
//
// # Safety
// `out` must be a valid pointer.
enum LabpStatus labp_grid_new(double r_min, double r_max, size_t n, struct LabpGrid **out);

// Grid with nodes `r_max/n, 2 r_max/n, ..., r_max`.
//
// # Safety
// `out` must be a valid pointer.
enum LabpStatus labp_grid_from_origin(double r_max, size_t n, struct LabpGrid **out);

// Number of nodes, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t labp_grid_len(const struct LabpGrid *grid);

// Copy the nodes into `out[0..len]`; `len` must equal the grid length.
//
// # Safety
// `grid` must be a live handle and `out` must point to `len` doubles.
enum LabpStatus labp_grid_nodes(const struct LabpGrid *grid, double *out, size_t len);

// # Safety
// `grid` must be null or a handle from this library, freed at most once.
void labp_grid_free(struct LabpGrid *grid);

// Solve one mode of `(H - (λ ± iε)) u = f`.
//
// `f_re`/`f_im` hold the unreduced source on the grid (`f_im` may be null). `potential` and
// `theta` may be null for the free problem; `amplitude`/`sigma0` describe their decay.
//
// # Safety
// Non-null arrays must hold `len` doubles; `grid` must be live; `out` must be valid.
enum LabpStatus labp_solve_mode(const struct LabpGrid *grid,
                                uint32_t n,
                                uint32_t l,
                                double lambda,
                                double epsilon,
                                enum LabpBranch branch,
                                enum LabpBoundary boundary,
                                const double *potential,
                                const double *theta,
                                double amplitude,
                                double sigma0,
                                const double *f_re,
                                const double *f_im,
                                size_t len,
                                struct LabpSolution **out);

// Number of nodes of the solution, or 0 for a null handle.
//
// # Safety
// `sol` must be null or a live handle.
size_t labp_solution_len(const struct LabpSolution *sol);

// Copy `u = r^{-(n-1)/2} v` into `re`/`im`, each of length `len`.
//
// # Safety
// `sol` must be live; `re` and `im` must point to `len` doubles.
enum LabpStatus labp_solution_values(const struct LabpSolution *sol,
                                     double *re,
                                     double *im,
                                     size_t len);

// Discrete residual of the linear solve, NaN for a null handle.
//
// # Safety
// `sol` must be null or a live handle.
double labp_solution_residual(const struct LabpSolution *sol);

// # Safety
// `sol` must be null or a handle from this library, freed at most once.
void labp_solution_free(struct LabpSolution *sol);

// Evaluate the catalog estimate named `estimate_id` (e.g. `"lap_resolvent"`).
//
// # Safety
// `sol` must be live, `estimate_id` a NUL-terminated string, `out` valid.
enum LabpStatus labp_estimate_gauge(const struct LabpSolution *sol,
                                    const char *estimate_id,
                                    double sigma,
                                    double c_exp,
                                    double region_radius,
                                    struct LabpGauge *out);

// Relative residual of the discrete charge identity.
//
// # Safety
// `sol` must be live and `out` valid.
enum LabpStatus labp_charge_residual(const struct LabpSolution *sol, double *out);

// Least-squares fit of `log y` against `log x`.
//
// # Safety
// `x` and `y` must point to `len` doubles; `out` must be valid.
enum LabpStatus labp_fit_loglog(const double *x, const double *y, size_t len, struct LabpFit *out);

// Run a sweep from its JSON config; `exit_status` receives the CLI exit code (0, 1 or 2).
//
// # Safety
// `config_json` must be a NUL-terminated string; `exit_status` must be null or valid.
enum LabpStatus labp_run_experiment(const char *config_json, int *exit_status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LABP_H */
