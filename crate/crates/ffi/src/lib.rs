//! C ABI over `fiopt-core`.
//!
//! Every function returns a [`FioptStatus`]; results come back through out
//! pointers. On failure a message is kept per thread and can be read with
//! [`fiopt_last_error`]. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fiopt::frontier::{fit_frontier, sleeve_expected_return, sweep_frontier};
use fiopt::instruments::{duration_convexity, price_bullet, stress_loss, yield_from_price};
use fiopt::io::RunConfig;
use fiopt::lp::{LinearProgram, LpStatus};
use fiopt::optimizer::{build_constraints, CuttingPlaneOptions, PortfolioProblem};
use fiopt::risk::{RiskModel, Sleeve};
use fiopt::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FioptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Domain = 3,
    NoRoot = 4,
    Infeasible = 5,
    Unbounded = 6,
    NotConverged = 7,
    Io = 8,
    Parse = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for FioptStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => FioptStatus::Domain,
            Error::NoRoot { .. } => FioptStatus::NoRoot,
            Error::Infeasible { .. } => FioptStatus::Infeasible,
            Error::Unbounded => FioptStatus::Unbounded,
            Error::IterationLimit(_) | Error::CuttingPlaneNotConverged { .. } | Error::NonMeanReverting { .. } => {
                FioptStatus::NotConverged
            }
            Error::Io(_) => FioptStatus::Io,
            Error::Parse { .. } | Error::Csv(_) | Error::Config(_) => FioptStatus::Parse,
            _ => FioptStatus::InvalidInput,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: FioptStatus, msg: impl Into<String>) -> FioptStatus {
    set_error(msg.into());
    status
}

/// Run `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), FioptStatus>) -> FioptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FioptStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(FioptStatus::Panic, "internal panic"),
    }
}

fn core<T>(r: fiopt::Result<T>) -> Result<T, FioptStatus> {
    r.map_err(|e| fail(FioptStatus::from(&e), e.to_string()))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), FioptStatus> {
    if p.is_null() {
        Err(fail(FioptStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], FioptStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    nonnull(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or point to `n` writable values.
unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], FioptStatus> {
    if n == 0 {
        return Ok(&mut []);
    }
    nonnull(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// # Safety
/// `p` must be a valid NUL-terminated string.
unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, FioptStatus> {
    nonnull(p, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FioptStatus::InvalidInput, "path is not UTF-8"))?;
    Ok(Path::new(s))
}

/// Copy the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fiopt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Price per unit par of a bullet bond at yield `y`.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn fiopt_price_bullet(t: f64, c: f64, m: u32, y: f64, out: *mut f64) -> FioptStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = core(price_bullet(t, c, m, y))?;
        Ok(())
    })
}

/// Yield at which the bond prices at `price`.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn fiopt_yield_from_price(t: f64, c: f64, m: u32, price: f64, out: *mut f64) -> FioptStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = core(yield_from_price(t, c, m, price))?;
        Ok(())
    })
}

/// Modified duration and convexity.
///
/// # Safety
/// `duration` and `convexity` must point to writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fiopt_duration_convexity(
    t: f64,
    c: f64,
    m: u32,
    y: f64,
    duration: *mut f64,
    convexity: *mut f64,
) -> FioptStatus {
    guard(|| {
        nonnull(duration, "duration")?;
        nonnull(convexity, "convexity")?;
        let (d, cv) = core(duration_convexity(t, c, m, y))?;
        *duration = d;
        *convexity = cv;
        Ok(())
    })
}

/// Loss of a par bond when its yield moves from `y0` to `y_star`.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn fiopt_stress_loss(t: f64, y0: f64, m: u32, y_star: f64, out: *mut f64) -> FioptStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = core(stress_loss(t, y0, m, y_star))?;
        Ok(())
    })
}

/// A validated list of sleeves.
pub struct FioptUniverse {
    sleeves: Vec<Sleeve>,
}

/// Load a universe file, or the built-in sample when `path` is null.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must point to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fiopt_universe_load(path: *const c_char, out: *mut *mut FioptUniverse) -> FioptStatus {
    guard(|| {
        nonnull(out, "out")?;
        let cfg = RunConfig::default();
        let sleeves = if path.is_null() {
            core(cfg.universe(None))?
        } else {
            core(cfg.universe(Some(path_arg(path)?)))?
        };
        *out = Box::into_raw(Box::new(FioptUniverse { sleeves }));
        Ok(())
    })
}

/// Number of sleeves, or 0 for a null handle.
///
/// # Safety
/// `u` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fiopt_universe_len(u: *const FioptUniverse) -> usize {
    u.as_ref().map_or(0, |u| u.sleeves.len())
}

/// # Safety
/// `u` must be null or a handle from [`fiopt_universe_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fiopt_universe_free(u: *mut FioptUniverse) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// Expected returns, constraints and risk model for one universe.
pub struct FioptEngine {
    er: Vec<f64>,
    problem: PortfolioProblem,
    model: RiskModel,
    cut: CuttingPlaneOptions,
}

/// Build an engine from a universe and a run configuration (null for the
/// built-in sample configuration). The universe handle stays owned by the caller.
///
/// # Safety
/// `universe` must be a live handle; `config` null or a NUL-terminated
/// string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fiopt_engine_new(
    universe: *const FioptUniverse,
    config: *const c_char,
    out: *mut *mut FioptEngine,
) -> FioptStatus {
    guard(|| {
        nonnull(universe, "universe")?;
        nonnull(out, "out")?;
        let cfg = if config.is_null() {
            RunConfig::sample()
        } else {
            core(RunConfig::load(path_arg(config)?))?
        };
        let sleeves = &(*universe).sleeves;
        let curves = core(cfg.rating_curves())?;
        let matrix = core(cfg.transition_matrix())?;
        let er = sleeves
            .iter()
            .map(|s| sleeve_expected_return(s, &curves, &matrix, cfg.horizon, cfg.return_options()).map(|e| e.total))
            .collect::<fiopt::Result<Vec<f64>>>();
        let er = core(er)?;
        let constraints = core(build_constraints(sleeves, &cfg.caps))?;
        let problem = core(PortfolioProblem::new(er.clone(), constraints))?;
        let model = core(RiskModel::new(sleeves, &cfg.risk))?;
        *out = Box::into_raw(Box::new(FioptEngine {
            er,
            problem,
            model,
            cut: cfg.cutting_plane.into(),
        }));
        Ok(())
    })
}

/// Copy the per-sleeve expected returns into `out` (length `n`, which must
/// equal the universe size).
///
/// # Safety
/// `e` must be a live handle and `out` point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fiopt_engine_expected_returns(e: *const FioptEngine, out: *mut f64, n: usize) -> FioptStatus {
    guard(|| {
        nonnull(e, "engine")?;
        let e = &*e;
        if n != e.er.len() {
            return Err(fail(
                FioptStatus::BufferTooSmall,
                format!("need {} values, got {n}", e.er.len()),
            ));
        }
        slice_mut(out, n, "out")?.copy_from_slice(&e.er);
        Ok(())
    })
}

/// Efficient frontier on the risk limits `grid[0..n]`. Writes the optimal
/// expected return per limit to `er_out`, and when `weights_out` is not
/// null the weights row-major (`n` rows of universe size).
///
/// # Safety
/// `e` must be a live handle; `grid` and `er_out` must hold `n` doubles;
/// `weights_out` null or `n * size` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fiopt_engine_sweep(
    e: *const FioptEngine,
    grid: *const f64,
    n: usize,
    er_out: *mut f64,
    weights_out: *mut f64,
) -> FioptStatus {
    guard(|| {
        nonnull(e, "engine")?;
        let e = &*e;
        let grid = slice(grid, n, "grid")?;
        let er_out = slice_mut(er_out, n, "er_out")?;
        let points = core(sweep_frontier(&e.problem, &e.model, grid, &e.cut))?;
        for (slot, p) in er_out.iter_mut().zip(&points) {
            *slot = p.expected_return;
        }
        if !weights_out.is_null() {
            let width = e.er.len();
            let w = slice_mut(weights_out, n * width, "weights_out")?;
            for (row, p) in w.chunks_mut(width).zip(&points) {
                row.copy_from_slice(&p.weights);
            }
        }
        Ok(())
    })
}

/// Sweep and fit `r = a (1 - exp(-R / b))` in one call.
///
/// # Safety
/// `e` must be a live handle; `grid` must hold `n` doubles; `a`, `b` and
/// `rmse` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fiopt_engine_fit(
    e: *const FioptEngine,
    grid: *const f64,
    n: usize,
    a: *mut f64,
    b: *mut f64,
    rmse: *mut f64,
) -> FioptStatus {
    guard(|| {
        nonnull(e, "engine")?;
        nonnull(a, "a")?;
        nonnull(b, "b")?;
        nonnull(rmse, "rmse")?;
        let e = &*e;
        let grid = slice(grid, n, "grid")?;
        let points = core(sweep_frontier(&e.problem, &e.model, grid, &e.cut))?;
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.risk_limit, p.expected_return)).collect();
        let fit = core(fit_frontier(&xy))?;
        *a = fit.a;
        *b = fit.b;
        *rmse = fit.rmse;
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a handle from [`fiopt_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fiopt_engine_free(e: *mut FioptEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Fit the frontier model to `n` given (risk, return) points.
///
/// # Safety
/// `risk` and `er` must hold `n` doubles; `a`, `b`, `rmse` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fiopt_fit_frontier(
    risk: *const f64,
    er: *const f64,
    n: usize,
    a: *mut f64,
    b: *mut f64,
    rmse: *mut f64,
) -> FioptStatus {
    guard(|| {
        nonnull(a, "a")?;
        nonnull(b, "b")?;
        nonnull(rmse, "rmse")?;
        let xs = slice(risk, n, "risk")?;
        let ys = slice(er, n, "er")?;
        let xy: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        let fit = core(fit_frontier(&xy))?;
        *a = fit.a;
        *b = fit.b;
        *rmse = fit.rmse;
        Ok(())
    })
}

/// Linear program under construction: maximise `c.x` subject to rows and
/// bounds (default `[0, inf)`).
pub struct FioptLp {
    lp: LinearProgram,
}

/// # Safety
/// `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fiopt_lp_new(n_vars: usize, out: *mut *mut FioptLp) -> FioptStatus {
    guard(|| {
        nonnull(out, "out")?;
        if n_vars == 0 {
            return Err(fail(FioptStatus::InvalidInput, "an LP needs at least one variable"));
        }
        *out = Box::into_raw(Box::new(FioptLp {
            lp: LinearProgram::new(n_vars),
        }));
        Ok(())
    })
}

/// # Safety
/// `lp` must be a live handle and `c` hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fiopt_lp_set_objective(lp: *mut FioptLp, c: *const f64, n: usize) -> FioptStatus {
    guard(|| {
        nonnull(lp, "lp")?;
        let c = slice(c, n, "c")?;
        core((*lp).lp.set_objective(c.to_vec()))
    })
}

/// Use `-INFINITY` / `INFINITY` for free sides.
///
/// # Safety
/// `lp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fiopt_lp_set_bounds(lp: *mut FioptLp, j: usize, lo: f64, hi: f64) -> FioptStatus {
    guard(|| {
        nonnull(lp, "lp")?;
        core((*lp).lp.set_bounds(j, lo, hi))
    })
}

/// Add `coeffs . x <= rhs`.
///
/// # Safety
/// `lp` must be a live handle and `coeffs` hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fiopt_lp_add_le(lp: *mut FioptLp, coeffs: *const f64, n: usize, rhs: f64) -> FioptStatus {
    guard(|| {
        nonnull(lp, "lp")?;
        let row = slice(coeffs, n, "coeffs")?.to_vec();
        let label = format!("row{}", (*lp).lp.n_rows());
        core((*lp).lp.add_le(row, rhs, label)).map(|_| ())
    })
}

/// Add `coeffs . x = rhs`.
///
/// # Safety
/// `lp` must be a live handle and `coeffs` hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fiopt_lp_add_eq(lp: *mut FioptLp, coeffs: *const f64, n: usize, rhs: f64) -> FioptStatus {
    guard(|| {
        nonnull(lp, "lp")?;
        let row = slice(coeffs, n, "coeffs")?.to_vec();
        let label = format!("row{}", (*lp).lp.n_rows());
        core((*lp).lp.add_eq(row, rhs, label)).map(|_| ())
    })
}

/// Solve. On success `x` (length `n`, equal to the variable count) and
/// `objective` are written; infeasible and unbounded programs return
/// their status codes.
///
/// # Safety
/// `lp` must be a live handle, `x` hold `n` writable doubles and
/// `objective` be writable.
#[no_mangle]
pub unsafe extern "C" fn fiopt_lp_solve(lp: *const FioptLp, x: *mut f64, n: usize, objective: *mut f64) -> FioptStatus {
    guard(|| {
        nonnull(lp, "lp")?;
        nonnull(objective, "objective")?;
        let lp = &(*lp).lp;
        if n != lp.n_vars() {
            return Err(fail(
                FioptStatus::BufferTooSmall,
                format!("need {} values, got {n}", lp.n_vars()),
            ));
        }
        let x = slice_mut(x, n, "x")?;
        let sol = core(lp.solve())?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(fail(FioptStatus::Infeasible, "linear program is infeasible")),
            LpStatus::Unbounded => return Err(fail(FioptStatus::Unbounded, "linear program is unbounded")),
        }
        x.copy_from_slice(&sol.x);
        *objective = sol.objective;
        Ok(())
    })
}

/// # Safety
/// `lp` must be null or a handle from [`fiopt_lp_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fiopt_lp_free(lp: *mut FioptLp) {
    if !lp.is_null() {
        drop(Box::from_raw(lp));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = vec![0 as c_char; 256];
        let n = unsafe { fiopt_last_error(buf.as_mut_ptr(), buf.len()) };
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
        assert_eq!(s.len(), n.min(255));
        s
    }

    #[test]
    fn status_and_message() {
        let mut out = 0.0;
        assert_eq!(unsafe { fiopt_price_bullet(5.0, 0.04, 2, 0.04, &mut out) }, FioptStatus::Ok);
        assert!((out - 1.0).abs() < 1e-12);
        assert!(last_error().is_empty());
        assert_eq!(unsafe { fiopt_price_bullet(-1.0, 0.04, 2, 0.04, &mut out) }, FioptStatus::Domain);
        assert!(last_error().contains("maturity"));
        assert_eq!(
            unsafe { fiopt_price_bullet(5.0, 0.04, 2, 0.04, std::ptr::null_mut()) },
            FioptStatus::NullPointer
        );
    }

    #[test]
    fn error_truncation() {
        let mut out = 0.0;
        unsafe { fiopt_price_bullet(-1.0, 0.04, 2, 0.04, &mut out) };
        let mut buf = [0 as c_char; 4];
        let n = unsafe { fiopt_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 3);
        assert_eq!(buf[3], 0);
        assert_eq!(unsafe { fiopt_last_error(std::ptr::null_mut(), 0) }, n);
    }

    #[test]
    fn lp_round_trip() {
        let mut lp = std::ptr::null_mut();
        unsafe {
            assert_eq!(fiopt_lp_new(2, &mut lp), FioptStatus::Ok);
            fiopt_lp_set_objective(lp, [3.0, 2.0].as_ptr(), 2);
            fiopt_lp_add_le(lp, [1.0, 1.0].as_ptr(), 2, 4.0);
            fiopt_lp_add_le(lp, [1.0, 3.0].as_ptr(), 2, 6.0);
            fiopt_lp_set_bounds(lp, 0, 0.0, 3.0);
            let mut x = [0.0; 2];
            let mut obj = 0.0;
            assert_eq!(fiopt_lp_solve(lp, x.as_mut_ptr(), 2, &mut obj), FioptStatus::Ok);
            assert!((obj - 11.0).abs() < 1e-9, "{obj}");
            assert_eq!(fiopt_lp_solve(lp, x.as_mut_ptr(), 3, &mut obj), FioptStatus::BufferTooSmall);
            fiopt_lp_add_le(lp, [-1.0, 0.0].as_ptr(), 2, -5.0);
            assert_eq!(fiopt_lp_solve(lp, x.as_mut_ptr(), 2, &mut obj), FioptStatus::Infeasible);
            fiopt_lp_free(lp);
        }
    }
}
