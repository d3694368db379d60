//! C ABI over the labp mode solver, gauges, identities, fits and the experiment runner.
//!
//! Every entry point returns a [`LabpStatus`]; on failure the message is kept per thread and
//! read back with [`labp_last_error_message`]. Handles are opaque and freed by their `_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use labp::fit::loglog_fit;
use labp::identities::charge_residual;
use labp::resolvent::{estimate_gauge, mode_source, EstimateId, GaugeParams};
use labp::runner::{exit_code, run_experiment, ExperimentConfig};
use labp::{BcKind, Branch, LabError, ModeParams, ModeProblem, ModeSolution, Profiles, RadialFunction, RadialGrid};
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabpStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Singular = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabpBranch {
    /// `λ + iε`.
    Plus = 0,
    /// `λ - iε`.
    Minus = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabpBoundary {
    Outgoing = 0,
    Incoming = 1,
    Dirichlet = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LabpGauge {
    pub lhs: f64,
    pub rhs_factor: f64,
    pub ratio: f64,
    pub raw_ratio: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LabpFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Opaque radial grid.
pub struct LabpGrid {
    grid: Arc<RadialGrid>,
}

/// Opaque mode solution together with its unreduced source.
pub struct LabpSolution {
    sol: ModeSolution,
    source: RadialFunction,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &LabError) -> LabpStatus {
    match err {
        LabError::Singular { .. } => LabpStatus::Singular,
        LabError::NonFinite(_) | LabError::Numerical(_) => LabpStatus::Numerical,
        LabError::Io(_) => LabpStatus::Io,
        _ => LabpStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LabpStatus>) -> LabpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LabpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            LabpStatus::Panic
        }
    }
}

fn fail(err: LabError) -> LabpStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> LabpStatus {
    set_error(format!("null pointer: {what}"));
    LabpStatus::NullPointer
}

/// Copy the last error message of this thread into `buf` (NUL-terminated, truncated to `len`).
///
/// Returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn labp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn labp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Uniform grid of `n` nodes on `[r_min, r_max]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn labp_grid_new(r_min: f64, r_max: f64, n: usize, out: *mut *mut LabpGrid) -> LabpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = RadialGrid::uniform(r_min, r_max, n).map_err(fail)?;
        *out = Box::into_raw(Box::new(LabpGrid { grid: Arc::new(grid) }));
        Ok(())
    })
}

/// Grid with nodes `r_max/n, 2 r_max/n, ..., r_max`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn labp_grid_from_origin(r_max: f64, n: usize, out: *mut *mut LabpGrid) -> LabpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = RadialGrid::from_origin(r_max, n).map_err(fail)?;
        *out = Box::into_raw(Box::new(LabpGrid { grid: Arc::new(grid) }));
        Ok(())
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn labp_grid_len(grid: *const LabpGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.len())
}

/// Copy the nodes into `out[0..len]`; `len` must equal the grid length.
///
/// # Safety
/// `grid` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn labp_grid_nodes(grid: *const LabpGrid, out: *mut f64, len: usize) -> LabpStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| null("grid"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != g.grid.len() {
            return Err(fail(LabError::invalid(format!("buffer holds {len} values, grid has {}", g.grid.len()))));
        }
        slice::from_raw_parts_mut(out, len).copy_from_slice(g.grid.r());
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn labp_grid_free(grid: *mut LabpGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

unsafe fn read_profile(p: *const f64, len: usize) -> Vec<f64> {
    if p.is_null() {
        vec![0.0; len]
    } else {
        slice::from_raw_parts(p, len).to_vec()
    }
}

/// Solve one mode of `(H - (λ ± iε)) u = f`.
///
/// `f_re`/`f_im` hold the unreduced source on the grid (`f_im` may be null). `potential` and
/// `theta` may be null for the free problem; `amplitude`/`sigma0` describe their decay.
///
/// # Safety
/// Non-null arrays must hold `len` doubles; `grid` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn labp_solve_mode(
    grid: *const LabpGrid,
    n: u32,
    l: u32,
    lambda: f64,
    epsilon: f64,
    branch: LabpBranch,
    boundary: LabpBoundary,
    potential: *const f64,
    theta: *const f64,
    amplitude: f64,
    sigma0: f64,
    f_re: *const f64,
    f_im: *const f64,
    len: usize,
    out: *mut *mut LabpSolution,
) -> LabpStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| null("grid"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if f_re.is_null() {
            return Err(null("f_re"));
        }
        let grid = g.grid.clone();
        if len != grid.len() {
            return Err(fail(LabError::invalid(format!("source has {len} values, grid has {}", grid.len()))));
        }
        let re = slice::from_raw_parts(f_re, len);
        let im = read_profile(f_im, len);
        let vals: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let source = RadialFunction::new(grid.clone(), vals).map_err(fail)?;
        let free = potential.is_null() && theta.is_null();
        let profiles = if free {
            Profiles::free(&grid)
        } else {
            Profiles::new(read_profile(potential, len), read_profile(theta, len), amplitude, sigma0).map_err(fail)?
        };
        let mode = ModeParams::new(n, l).map_err(fail)?;
        let branch = match branch {
            LabpBranch::Plus => Branch::Plus,
            LabpBranch::Minus => Branch::Minus,
        };
        let bc = match boundary {
            LabpBoundary::Outgoing => BcKind::Outgoing,
            LabpBoundary::Incoming => BcKind::Incoming,
            LabpBoundary::Dirichlet => BcKind::Dirichlet,
        };
        let problem = ModeProblem::new(mode, Arc::new(profiles), lambda, epsilon, branch, grid).map_err(fail)?;
        let g_src = mode_source(&source, &mode);
        let sol = labp::solve_resolvent_mode(&problem, &g_src, bc).map_err(fail)?;
        *out = Box::into_raw(Box::new(LabpSolution { sol, source }));
        Ok(())
    })
}

/// Number of nodes of the solution, or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn labp_solution_len(sol: *const LabpSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.sol.v.len())
}

/// Copy `u = r^{-(n-1)/2} v` into `re`/`im`, each of length `len`.
///
/// # Safety
/// `sol` must be live; `re` and `im` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn labp_solution_values(sol: *const LabpSolution, re: *mut f64, im: *mut f64, len: usize) -> LabpStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("sol"))?;
        if re.is_null() || im.is_null() {
            return Err(null("re/im"));
        }
        let u = s.sol.u();
        if len != u.len() {
            return Err(fail(LabError::invalid(format!("buffers hold {len} values, solution has {}", u.len()))));
        }
        let (re, im) = (slice::from_raw_parts_mut(re, len), slice::from_raw_parts_mut(im, len));
        for (i, z) in u.values().iter().enumerate() {
            re[i] = z.re;
            im[i] = z.im;
        }
        Ok(())
    })
}

/// Discrete residual of the linear solve, NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn labp_solution_residual(sol: *const LabpSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.sol.discrete_residual)
}

/// # Safety
/// `sol` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn labp_solution_free(sol: *mut LabpSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Evaluate the catalog estimate named `estimate_id` (e.g. `"lap_resolvent"`).
///
/// # Safety
/// `sol` must be live, `estimate_id` a NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn labp_estimate_gauge(
    sol: *const LabpSolution,
    estimate_id: *const c_char,
    sigma: f64,
    c_exp: f64,
    region_radius: f64,
    out: *mut LabpGauge,
) -> LabpStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("sol"))?;
        if estimate_id.is_null() {
            return Err(null("estimate_id"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let name = CStr::from_ptr(estimate_id)
            .to_str()
            .map_err(|_| fail(LabError::invalid("estimate id is not UTF-8")))?;
        let id: EstimateId = name.parse().map_err(fail)?;
        let params = GaugeParams { sigma, c_exp, region_radius };
        let rep = estimate_gauge(&s.sol, &s.source, id, &params).map_err(fail)?;
        *out = LabpGauge { lhs: rep.lhs, rhs_factor: rep.rhs_factor, ratio: rep.ratio, raw_ratio: rep.raw_ratio() };
        Ok(())
    })
}

/// Relative residual of the discrete charge identity.
///
/// # Safety
/// `sol` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn labp_charge_residual(sol: *const LabpSolution, out: *mut f64) -> LabpStatus {
    guard(|| {
        let s = sol.as_ref().ok_or_else(|| null("sol"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = charge_residual(&s.sol, &s.source).map_err(fail)?.relative_residual;
        Ok(())
    })
}

/// Least-squares fit of `log y` against `log x`.
///
/// # Safety
/// `x` and `y` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn labp_fit_loglog(x: *const f64, y: *const f64, len: usize, out: *mut LabpFit) -> LabpStatus {
    guard(|| {
        if x.is_null() || y.is_null() {
            return Err(null("x/y"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let fit = loglog_fit(slice::from_raw_parts(x, len), slice::from_raw_parts(y, len)).map_err(fail)?;
        *out = LabpFit { slope: fit.slope, intercept: fit.intercept, r2: fit.r2 };
        Ok(())
    })
}

/// Run a sweep from its JSON config; `exit_status` receives the CLI exit code (0, 1 or 2).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `exit_status` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn labp_run_experiment(config_json: *const c_char, exit_status: *mut c_int) -> LabpStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| fail(LabError::invalid("config is not UTF-8")))?;
        let outcome = ExperimentConfig::from_json(text).and_then(|c| run_experiment(&c));
        if !exit_status.is_null() {
            *exit_status = exit_code(&outcome);
        }
        match outcome {
            Ok(summary) if summary.failures.is_empty() => Ok(()),
            Ok(summary) => Err(fail(LabError::Numerical(summary.failures.join("; ")))),
            Err(e) => Err(fail(e)),
        }
    })
}
