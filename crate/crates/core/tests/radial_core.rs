use std::sync::Arc;

use approx::assert_relative_eq;
use num_complex::Complex64;
use proptest::prelude::*;

use labp::radial::{compact_bump, fmt_num, smooth_step, weighted_norm, weighted_norm_on, MIN_GRID_POINTS};
use labp::{LabError, ModeParams, RadialFunction, RadialGrid, WeightSpec};

#[test]
fn from_origin_places_first_node_one_spacing_out() {
    let g = RadialGrid::from_origin(10.0, 1000).unwrap();
    assert_eq!(g.len(), 1000);
    assert_relative_eq!(g.h(), 0.01, epsilon = 1e-15);
    assert_relative_eq!(g.r_min(), 0.01, epsilon = 1e-15);
    assert_eq!(g.r_max(), 10.0);
}

#[test]
fn grid_rejects_bad_bounds() {
    assert!(matches!(RadialGrid::uniform(0.0, 1.0, 64), Err(LabError::InvalidInput(_))));
    assert!(matches!(RadialGrid::uniform(2.0, 1.0, 64), Err(LabError::InvalidInput(_))));
    assert!(RadialGrid::uniform(0.1, 1.0, MIN_GRID_POINTS - 1).is_err());
    assert!(RadialGrid::uniform(0.1, f64::INFINITY, 64).is_err());
}

#[test]
fn index_range_is_inclusive() {
    let g = RadialGrid::uniform(1.0, 2.0, 21).unwrap();
    let idx = g.index_range(1.2, 1.5);
    assert_eq!(idx, 4..11);
    assert_eq!(g.nearest_index(1.449), 9);
}

#[test]
fn radial_function_length_must_match() {
    let g = Arc::new(RadialGrid::uniform(1.0, 2.0, 32).unwrap());
    assert!(RadialFunction::new(g.clone(), vec![Complex64::new(0.0, 0.0); 31]).is_err());
    assert!(RadialFunction::new(g, vec![Complex64::new(0.0, 0.0); 32]).is_ok());
}

#[test]
fn bump_and_step_shapes() {
    assert_eq!(compact_bump(0.0), 1.0);
    assert_eq!(compact_bump(1.0), 0.0);
    assert_eq!(compact_bump(-1.5), 0.0);
    assert_eq!(smooth_step(-0.1), 0.0);
    assert_eq!(smooth_step(1.1), 1.0);
    assert_relative_eq!(smooth_step(0.5), 0.5, epsilon = 1e-14);
}

#[test]
fn l2_norm_of_constant_is_exact() {
    let g = Arc::new(RadialGrid::uniform(1.0, 5.0, 401).unwrap());
    let mode = ModeParams::new(3, 0).unwrap();
    let v = RadialFunction::from_real_fn(g, |_| 1.0);
    let norm = weighted_norm(&v, WeightSpec::l2(0.0), &mode).unwrap();
    assert_relative_eq!(norm, 2.0, epsilon = 1e-13);
}

#[test]
fn gradient_of_constant_u_vanishes() {
    // v = r^k is the reduced form of u = 1 for l = 0, so the H¹ and L² norms agree.
    let g = Arc::new(RadialGrid::uniform(1.0, 5.0, 801).unwrap());
    let mode = ModeParams::new(3, 0).unwrap();
    let v = RadialFunction::from_real_fn(g, |r| r);
    let l2 = weighted_norm(&v, WeightSpec::l2(-1.0), &mode).unwrap();
    let h1 = weighted_norm_on(&v, WeightSpec::h1(-1.0), &mode, 1.01, 4.99).unwrap();
    let l2_in = weighted_norm_on(&v, WeightSpec::l2(-1.0), &mode, 1.01, 4.99).unwrap();
    assert!(l2 > l2_in);
    assert_relative_eq!(h1, l2_in, max_relative = 1e-12);
}

#[test]
fn weight_spec_validation() {
    assert!(WeightSpec::new(2, 0.0).is_err());
    assert!(WeightSpec::new(1, f64::NAN).is_err());
    assert!(WeightSpec::new(0, -0.75).is_ok());
}

#[test]
fn weighted_norm_rejects_non_finite() {
    let g = Arc::new(RadialGrid::uniform(1.0, 5.0, 64).unwrap());
    let mode = ModeParams::new(3, 0).unwrap();
    let v = RadialFunction::from_real_fn(g, |r| if r > 3.0 { f64::NAN } else { 1.0 });
    assert!(matches!(weighted_norm(&v, WeightSpec::l2(0.0), &mode), Err(LabError::NonFinite(_))));
}

#[test]
fn mode_params_reject_low_dimension() {
    assert!(ModeParams::new(2, 0).is_err());
    let m = ModeParams::new(4, 2).unwrap();
    assert_relative_eq!(m.big_l(), 3.5);
    assert_relative_eq!(m.angular(), 8.0);
}

#[test]
fn csv_writes_one_line_per_node() {
    let g = Arc::new(RadialGrid::uniform(1.0, 2.0, 16).unwrap());
    let v = RadialFunction::from_real_fn(g, |r| r);
    let mut buf = Vec::new();
    v.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 17);
}

proptest! {
    #[test]
    fn centrifugal_splits_into_angular_and_reduction(n in 3u32..9, l in 0u32..40) {
        let m = ModeParams::new(n, l).unwrap();
        let k = m.half_power();
        prop_assert!((m.centrifugal() - (m.angular() + k * (k - 1.0))).abs() <= 1e-9 * (1.0 + m.centrifugal()));
    }

    #[test]
    fn trapezoid_integrates_linear_exactly(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 16usize..400) {
        let g = RadialGrid::uniform(0.5, 3.0, n).unwrap();
        let dens: Vec<f64> = g.r().iter().map(|&r| a + b * r).collect();
        let exact = a * 2.5 + 0.5 * b * (9.0 - 0.25);
        prop_assert!((g.integrate(&dens) - exact).abs() <= 1e-11 * (1.0 + exact.abs()));
    }

    #[test]
    fn formatted_numbers_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
        let back: f64 = fmt_num(x).parse().unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn weighted_norm_is_homogeneous(c in 0.01f64..100.0, m in -2.0f64..2.0) {
        let g = Arc::new(RadialGrid::uniform(0.1, 10.0, 128).unwrap());
        let mode = ModeParams::new(3, 1).unwrap();
        let v = RadialFunction::from_real_fn(g, |r| (-r).exp() * r);
        let base = weighted_norm(&v, WeightSpec::h1(m), &mode).unwrap();
        let scaled = weighted_norm(&v.scaled(Complex64::new(0.0, c)), WeightSpec::h1(m), &mode).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-12 * c * base);
    }
}
