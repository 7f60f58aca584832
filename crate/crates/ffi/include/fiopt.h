#ifndef FIOPT_H
#define FIOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result codes.
 */
typedef enum FioptStatus {
  FIOPT_STATUS_OK = 0,
  FIOPT_STATUS_NULL_POINTER = 1,
  FIOPT_STATUS_INVALID_INPUT = 2,
  FIOPT_STATUS_DOMAIN = 3,
  FIOPT_STATUS_NO_ROOT = 4,
  FIOPT_STATUS_INFEASIBLE = 5,
  FIOPT_STATUS_UNBOUNDED = 6,
  FIOPT_STATUS_NOT_CONVERGED = 7,
  FIOPT_STATUS_IO = 8,
  FIOPT_STATUS_PARSE = 9,
  FIOPT_STATUS_BUFFER_TOO_SMALL = 10,
  FIOPT_STATUS_PANIC = 11,
} FioptStatus;

/*
 Expected returns, constraints and risk model for one universe.
 */
typedef struct FioptEngine FioptEngine;

/*
 Linear program under construction: maximise `c.x` subject to rows and
 bounds (default `[0, inf)`).
 */
typedef struct FioptLp FioptLp;

/*
 A validated list of sleeves.
 */
typedef struct FioptUniverse FioptUniverse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copy the last error message of this thread into `buf` (NUL terminated,
 truncated to `len`). Returns the full message length excluding the NUL.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t fiopt_last_error(char *buf, size_t len);

/*
 Price per unit par of a bullet bond at yield `y`.

 # Safety
 `out` must point to a writable double.
 */
enum FioptStatus fiopt_price_bullet(double t, double c, uint32_t m, double y, double *out);

/*
 Yield at which the bond prices at `price`.

 # Safety
 `out` must point to a writable double.
 */
enum FioptStatus fiopt_yield_from_price(double t, double c, uint32_t m, double price, double *out);

/*
 Modified duration and convexity.

 # Safety
 `duration` and `convexity` must point to writable doubles.
 */
enum FioptStatus fiopt_duration_convexity(double t,
                                          double c,
                                          uint32_t m,
                                          double y,
                                          double *duration,
                                          double *convexity);

/*
 Loss of a par bond when its yield moves from `y0` to `y_star`.

 # Safety
 `out` must point to a writable double.
 */
enum FioptStatus fiopt_stress_loss(double t, double y0, uint32_t m, double y_star, double *out);

/*
 Load a universe file, or the built-in sample when `path` is null.

 # Safety
 `path` must be null or a NUL-terminated string; `out` must point to a
 writable handle slot.
 */
enum FioptStatus fiopt_universe_load(const char *path, struct FioptUniverse **out);

/*
 Number of sleeves, or 0 for a null handle.

 # Safety
 `u` must be null or a live handle.
 */
size_t fiopt_universe_len(const struct FioptUniverse *u);

/*
 # Safety
 `u` must be null or a handle from [`fiopt_universe_load`] not yet freed.
 */
void fiopt_universe_free(struct FioptUniverse *u);

/*
 Build an engine from a universe and a run configuration (null for the
 built-in sample configuration). The universe handle stays owned by the caller.

 # Safety
 `universe` must be a live handle; `config` null or a NUL-terminated
 string; `out` a writable handle slot.
 */
enum FioptStatus fiopt_engine_new(const struct FioptUniverse *universe,
                                  const char *config,
                                  struct FioptEngine **out);

/*
 Copy the per-sleeve expected returns into `out` (length `n`, which must
 equal the universe size).

 # Safety
 `e` must be a live handle and `out` point to `n` writable doubles.
 */
enum FioptStatus fiopt_engine_expected_returns(const struct FioptEngine *e, double *out, size_t n);

/*
 Efficient frontier on the risk limits `grid[0..n]`. Writes the optimal
 expected return per limit to `er_out`, and when `weights_out` is not
 null the weights row-major (`n` rows of universe size).

 # Safety
 `e` must be a live handle; `grid` and `er_out` must hold `n` doubles;
 `weights_out` null or `n * size` writable doubles.
 */
enum FioptStatus fiopt_engine_sweep(const struct FioptEngine *e,
                                    const double *grid,
                                    size_t n,
                                    double *er_out,
                                    double *weights_out);

/*
 Sweep and fit `r = a (1 - exp(-R / b))` in one call.

 # Safety
 `e` must be a live handle; `grid` must hold `n` doubles; `a`, `b` and
 `rmse` must be writable.
 */
enum FioptStatus fiopt_engine_fit(const struct FioptEngine *e,
                                  const double *grid,
                                  size_t n,
                                  double *a,
                                  double *b,
                                  double *rmse);

/*
 # Safety
 `e` must be null or a handle from [`fiopt_engine_new`] not yet freed.
 */
void fiopt_engine_free(struct FioptEngine *e);

/*
 Fit the frontier model to `n` given (risk, return) points.

 # Safety
 `risk` and `er` must hold `n` doubles; `a`, `b`, `rmse` must be writable.
 */
enum FioptStatus fiopt_fit_frontier(const double *risk,
                                    const double *er,
                                    size_t n,
                                    double *a,
                                    double *b,
                                    double *rmse);

/*
 # Safety
 `out` must point to a writable handle slot.
 */
enum FioptStatus fiopt_lp_new(size_t n_vars, struct FioptLp **out);

/*
 # Safety
 `lp` must be a live handle and `c` hold `n` doubles.
 */
enum FioptStatus fiopt_lp_set_objective(struct FioptLp *lp, const double *c, size_t n);

/*
 Use `-INFINITY` / `INFINITY` for free sides.

 # Safety
 `lp` must be a live handle.
 */
enum FioptStatus fiopt_lp_set_bounds(struct FioptLp *lp, size_t j, double lo, double hi);

/*
 Add `coeffs . x <= rhs`.

 # Safety
 `lp` must be a live handle and `coeffs` hold `n` doubles.
 */
enum FioptStatus fiopt_lp_add_le(struct FioptLp *lp, const double *coeffs, size_t n, double rhs);

/*
 Add `coeffs . x = rhs`.

 # Safety
 `lp` must be a live handle and `coeffs` hold `n` doubles.
 */
enum FioptStatus fiopt_lp_add_eq(struct FioptLp *lp, const double *coeffs, size_t n, double rhs);

/*
 Solve. On success `x` (length `n`, equal to the variable count) and
 `objective` are written; infeasible and unbounded programs return
 their status codes.

 # Safety
 `lp` must be a live handle, `x` hold `n` writable doubles and
 `objective` be writable.
 */
enum FioptStatus fiopt_lp_solve(const struct FioptLp *lp, double *x, size_t n, double *objective);

/*
 # Safety
 `lp` must be null or a handle from [`fiopt_lp_new`] not yet freed.
 */
void fiopt_lp_free(struct FioptLp *lp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIOPT_H */
