use std::ffi::{c_int, CStr, CString};
use std::ptr;

use labp_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { labp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

struct Solved {
    grid: *mut LabpGrid,
    sol: *mut LabpSolution,
}

impl Drop for Solved {
    fn drop(&mut self) {
        unsafe {
            labp_solution_free(self.sol);
            labp_grid_free(self.grid);
        }
    }
}

fn solve(epsilon: f64) -> Solved {
    let mut grid = ptr::null_mut();
    assert_eq!(unsafe { labp_grid_from_origin(60.0, 2048, &mut grid) }, LabpStatus::Ok);
    let len = unsafe { labp_grid_len(grid) };
    let mut nodes = vec![0.0; len];
    assert_eq!(unsafe { labp_grid_nodes(grid, nodes.as_mut_ptr(), len) }, LabpStatus::Ok);
    let f: Vec<f64> = nodes.iter().map(|&r| bump((r - 3.0) / 2.0)).collect();
    let mut sol = ptr::null_mut();
    let st = unsafe {
        labp_solve_mode(
            grid,
            3,
            0,
            1.0,
            epsilon,
            LabpBranch::Plus,
            LabpBoundary::Outgoing,
            ptr::null(),
            ptr::null(),
            0.0,
            1.0,
            f.as_ptr(),
            ptr::null(),
            len,
            &mut sol,
        )
    };
    assert_eq!(st, LabpStatus::Ok);
    Solved { grid, sol }
}

#[test]
fn grid_round_trip() {
    let mut grid = ptr::null_mut();
    assert_eq!(unsafe { labp_grid_new(1.0, 2.0, 11, &mut grid) }, LabpStatus::InvalidArgument);
    assert!(last_error().contains("grid"));
    assert_eq!(unsafe { labp_grid_new(1.0, 2.0, 101, &mut grid) }, LabpStatus::Ok);
    let mut nodes = vec![0.0; 101];
    assert_eq!(unsafe { labp_grid_nodes(grid, nodes.as_mut_ptr(), 101) }, LabpStatus::Ok);
    assert_eq!(nodes[0], 1.0);
    assert_eq!(nodes[100], 2.0);
    assert_eq!(unsafe { labp_grid_nodes(grid, nodes.as_mut_ptr(), 50) }, LabpStatus::InvalidArgument);
    unsafe { labp_grid_free(grid) };
    unsafe { labp_grid_free(ptr::null_mut()) };
}

#[test]
fn solve_and_measure() {
    let s = solve(0.0);
    let len = unsafe { labp_solution_len(s.sol) };
    let (mut re, mut im) = (vec![0.0; len], vec![0.0; len]);
    assert_eq!(unsafe { labp_solution_values(s.sol, re.as_mut_ptr(), im.as_mut_ptr(), len) }, LabpStatus::Ok);
    assert!(re.iter().chain(&im).all(|x| x.is_finite()));
    assert!(im.iter().any(|&x| x != 0.0));
    assert!(unsafe { labp_solution_residual(s.sol) } <= 1e-10);

    let mut gauge = LabpGauge::default();
    let id = CString::new("lap_resolvent").unwrap();
    assert_eq!(unsafe { labp_estimate_gauge(s.sol, id.as_ptr(), 0.25, 2.0, 10.0, &mut gauge) }, LabpStatus::Ok);
    assert!(gauge.lhs > 0.0 && gauge.rhs_factor > 0.0);
    assert!((gauge.raw_ratio - gauge.lhs / gauge.rhs_factor).abs() <= 1e-12 * gauge.raw_ratio);
}

#[test]
fn charge_identity_through_the_abi() {
    let s = solve(0.3);
    let mut res = f64::NAN;
    assert_eq!(unsafe { labp_charge_residual(s.sol, &mut res) }, LabpStatus::Ok);
    assert!(res < 1e-10);
}

#[test]
fn unknown_estimate_is_an_invalid_argument() {
    let s = solve(0.0);
    let mut gauge = LabpGauge::default();
    let id = CString::new("no_such_estimate").unwrap();
    assert_eq!(
        unsafe { labp_estimate_gauge(s.sol, id.as_ptr(), 0.25, 2.0, 10.0, &mut gauge) },
        LabpStatus::InvalidArgument
    );
    assert!(last_error().contains("no_such_estimate"));
}

#[test]
fn null_handles_are_reported() {
    let mut gauge = LabpGauge::default();
    let id = CString::new("charge").unwrap();
    assert_eq!(
        unsafe { labp_estimate_gauge(ptr::null(), id.as_ptr(), 0.25, 2.0, 10.0, &mut gauge) },
        LabpStatus::NullPointer
    );
    assert!(last_error().contains("sol"));
    assert_eq!(unsafe { labp_grid_from_origin(10.0, 64, ptr::null_mut()) }, LabpStatus::NullPointer);
    assert_eq!(unsafe { labp_grid_len(ptr::null()) }, 0);
    assert_eq!(unsafe { labp_solution_len(ptr::null()) }, 0);
    assert!(unsafe { labp_solution_residual(ptr::null()) }.is_nan());
    assert_eq!(unsafe { labp_run_experiment(ptr::null(), ptr::null_mut()) }, LabpStatus::NullPointer);
}

#[test]
fn error_message_is_truncated_safely() {
    let mut grid = ptr::null_mut();
    assert_ne!(unsafe { labp_grid_new(-1.0, 2.0, 100, &mut grid) }, LabpStatus::Ok);
    let mut small = [0 as std::ffi::c_char; 8];
    let full = unsafe { labp_last_error_message(small.as_mut_ptr(), small.len()) };
    assert!(full > 7);
    assert_eq!(small[7], 0);
    assert_eq!(unsafe { labp_last_error_message(ptr::null_mut(), 0) }, full);
}

#[test]
fn loglog_fit_through_the_abi() {
    let x = [1.0, 2.0, 4.0, 8.0];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
    let mut fit = LabpFit::default();
    assert_eq!(unsafe { labp_fit_loglog(x.as_ptr(), y.as_ptr(), 4, &mut fit) }, LabpStatus::Ok);
    assert!((fit.slope + 1.5).abs() < 1e-12);
    assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { labp_fit_loglog(x.as_ptr(), y.as_ptr(), 1, &mut fit) }, LabpStatus::InvalidArgument);
}

#[test]
fn run_experiment_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let good = CString::new(format!(
        r#"{{"experiment": "lap_scan", "lambda_grid": [1.0], "resolution": 2048, "out_dir": {:?}}}"#,
        out.to_str().unwrap()
    ))
    .unwrap();
    let mut code: c_int = -1;
    assert_eq!(unsafe { labp_run_experiment(good.as_ptr(), &mut code) }, LabpStatus::Ok);
    assert_eq!(code, 0);
    assert!(out.join("lap_scan.csv").exists());

    let bad = CString::new(r#"{"experiment": "lap_scan", "lambda_grid": []}"#).unwrap();
    assert_eq!(unsafe { labp_run_experiment(bad.as_ptr(), &mut code) }, LabpStatus::InvalidArgument);
    assert_eq!(code, 1);
    assert!(last_error().contains("lambda_grid"));
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(labp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/labp.h")).unwrap();
    for sym in [
        "labp_last_error_message",
        "labp_version",
        "labp_grid_new",
        "labp_grid_from_origin",
        "labp_grid_len",
        "labp_grid_nodes",
        "labp_grid_free",
        "labp_solve_mode",
        "labp_solution_len",
        "labp_solution_values",
        "labp_solution_residual",
        "labp_solution_free",
        "labp_estimate_gauge",
        "labp_charge_residual",
        "labp_fit_loglog",
        "labp_run_experiment",
        "LABP_STATUS_NULL_POINTER",
        "typedef struct LabpGrid LabpGrid",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
