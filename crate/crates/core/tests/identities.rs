use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use labp::fit::loglog_fit;
use labp::identities::{
    carleman_identity_residual, carleman_source, charge_residual, lagrangean_residual, morawetz_bulk,
    morawetz_residual, morawetz_sign_constants, sommerfeld_gauge, MorawetzForm, WeightFunction,
};
use labp::radial::compact_bump;
use labp::resolvent::mode_source;
use labp::runner::reference_source;
use labp::{solve_resolvent_mode, BcKind, Branch, ModeParams, ModeProblem, ModeSolution, RadialFunction, RadialGrid};

fn solve(r_max: f64, n: usize, l: u32, lambda: f64, eps: f64, bc: BcKind) -> (ModeSolution, RadialFunction) {
    let g = Arc::new(RadialGrid::from_origin(r_max, n).unwrap());
    let f = reference_source(g.clone());
    let branch = if bc == BcKind::Incoming { Branch::Minus } else { Branch::Plus };
    let p = ModeProblem::free(ModeParams::new(3, l).unwrap(), lambda, eps, branch, g).unwrap();
    let sol = solve_resolvent_mode(&p, &mode_source(&f, &p.mode), bc).unwrap();
    (sol, f)
}

fn cutoff(g: &Arc<RadialGrid>, lo: f64, hi: f64) -> RadialFunction {
    let (c, w) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    RadialFunction::from_real_fn(g.clone(), |r| compact_bump((r - c) / w))
}

#[test]
fn charge_identity_closes_for_positive_epsilon() {
    for bc in [BcKind::Outgoing, BcKind::Dirichlet] {
        let (sol, f) = solve(60.0, 1 << 12, 1, 1.0, 0.2, bc);
        let rep = charge_residual(&sol, &f).unwrap();
        assert!(rep.relative_residual < 1e-10, "{bc:?}: {rep:?}");
        assert!(rep.lhs > 0.0);
    }
}

#[test]
fn charge_identity_at_zero_epsilon_is_pure_flux() {
    let (sol, f) = solve(60.0, 1 << 12, 0, 2.0, 0.0, BcKind::Outgoing);
    let rep = charge_residual(&sol, &f).unwrap();
    assert_eq!(rep.lhs, 0.0);
    let (_, outer) = sol.boundary_fluxes();
    assert!(outer > 0.0);
    // The radiated flux balances the source pairing.
    assert!(rep.residual < 1e-10 * rep.boundary_term.abs());
    assert!(rep.boundary_term > 0.0);
}

#[test]
fn lagrangean_identity_converges() {
    let mut res = Vec::new();
    for n in [1usize << 11, 1 << 12] {
        let (sol, _) = solve(40.0, n, 1, 1.5, 0.0, BcKind::Outgoing);
        let chi = cutoff(sol.v.grid(), 2.0, 20.0);
        let rep = lagrangean_residual(&sol, &chi).unwrap();
        assert_eq!(rep.identity_id, "lagrangean");
        res.push(rep.relative_residual);
    }
    assert!(res[1] < 1e-4, "{res:?}");
    assert!(res[0] / res[1] > 3.0, "{res:?}");
}

#[test]
fn cutoff_touching_the_boundary_is_rejected() {
    let (sol, _) = solve(40.0, 1024, 0, 1.0, 0.0, BcKind::Outgoing);
    let chi = RadialFunction::from_real_fn(sol.v.grid().clone(), |_| 1.0);
    assert!(lagrangean_residual(&sol, &chi).is_err());
}

#[test]
fn morawetz_identity_in_both_forms() {
    let (sol, _) = solve(40.0, 1 << 13, 2, 1.0, 0.0, BcKind::Outgoing);
    let g = sol.v.grid().clone();
    let w = WeightFunction::morawetz_default(g.clone(), 0.25).unwrap();
    let chi = cutoff(&g, 0.5, 30.0);
    let rep = morawetz_residual(&sol, &w, &chi, MorawetzForm::RealEnergy).unwrap();
    assert!(rep.relative_residual < 1e-4, "{rep:?}");
    assert!(morawetz_bulk(&sol, &w, &chi).unwrap() > 0.0);

    let (damped, _) = solve(40.0, 1 << 13, 2, 1.0, 0.1, BcKind::Outgoing);
    assert!(morawetz_residual(&damped, &w, &chi, MorawetzForm::RealEnergy).is_err());
    let rep = morawetz_residual(&damped, &w, &chi, MorawetzForm::AbsorbedEpsilon).unwrap();
    assert!(rep.relative_residual < 1e-4, "{rep:?}");
}

#[test]
fn default_weight_has_positive_sign_constants() {
    let (c_bi, c_hess) = morawetz_sign_constants(0.25, 3, 0.01, 100.0, 2000).unwrap();
    assert!(c_bi > 0.0 && c_hess > 0.0, "{c_bi} {c_hess}");
    assert!(WeightFunction::morawetz_default(Arc::new(RadialGrid::uniform(1.0, 2.0, 32).unwrap()), 0.5).is_err());
}

#[test]
fn carleman_identity_for_a_compact_profile() {
    let g = Arc::new(RadialGrid::uniform(0.5, 12.0, 1 << 13).unwrap());
    let mode = ModeParams::new(3, 1).unwrap();
    let u = RadialFunction::from_real_fn(g.clone(), |r| compact_bump((r - 5.0) / 3.0));
    let src = carleman_source(&u, mode, 2.0);
    let w = WeightFunction::carleman_bracket(g);
    let rep = carleman_identity_residual(&u, &w, 4.0, &src, mode).unwrap();
    assert!(rep.relative_residual < 1e-4, "{rep:?}");
    assert!(rep.lhs > 0.0);
}

#[test]
fn carleman_identity_is_trivial_without_weight() {
    let g = Arc::new(RadialGrid::uniform(0.5, 12.0, 1024).unwrap());
    let mode = ModeParams::new(3, 0).unwrap();
    let u = RadialFunction::from_real_fn(g.clone(), |r| compact_bump((r - 5.0) / 3.0));
    let src = carleman_source(&u, mode, 1.0);
    let rep = carleman_identity_residual(&u, &WeightFunction::carleman_bracket(g.clone()), 0.0, &src, mode).unwrap();
    assert_eq!(rep.residual, 0.0);
    let w = WeightFunction::carleman_bracket(g.clone());
    assert!(carleman_identity_residual(&u, &w, -1.0, &src, mode).is_err());
    let wide = RadialFunction::from_real_fn(g, |_| 1.0);
    assert!(carleman_identity_residual(&wide, &w, 1.0, &src, mode).is_err());
}

#[test]
fn sommerfeld_gauge_sees_the_radiation_condition() {
    let (sol, _) = solve(800.0, 1 << 15, 0, 1.0, 0.0, BcKind::Outgoing);
    let right = sommerfeld_gauge(&sol, BcKind::Outgoing, 0.125, 0.25, 5.0).unwrap();
    let wrong = sommerfeld_gauge(&sol, BcKind::Incoming, 0.125, 0.25, 5.0).unwrap();
    assert!(right.gauge_value < 0.05 * wrong.gauge_value, "{} vs {}", right.gauge_value, wrong.gauge_value);
    assert!(right.tail_growth_exponent < 0.05, "{}", right.tail_growth_exponent);
    // |v_r + i z v| is constant at infinity, so the norm over [10, R] tracks (R^{2σ'} - 10^{2σ'})^{1/2}.
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        wrong.tail_samples.iter().map(|&(rr, _)| (rr, (rr.powf(0.25) - 10f64.powf(0.25)).sqrt())).unzip();
    let expected = loglog_fit(&xs, &ys).unwrap().slope;
    assert!((wrong.tail_growth_exponent - expected).abs() < 0.02, "{} vs {expected}", wrong.tail_growth_exponent);
}

#[test]
fn sommerfeld_gauge_validation() {
    let (sol, _) = solve(100.0, 1024, 0, 1.0, 0.0, BcKind::Outgoing);
    assert!(sommerfeld_gauge(&sol, BcKind::Outgoing, 0.3, 0.25, 2.0).is_err());
    assert!(sommerfeld_gauge(&sol, BcKind::Dirichlet, 0.1, 0.25, 2.0).is_err());
    assert!(sommerfeld_gauge(&sol, BcKind::Outgoing, 0.1, 0.25, 10.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn charge_identity_holds_across_parameters(lam in 0.2f64..8.0, eps in 0.01f64..1.0, l in 0u32..4) {
        let (sol, f) = solve(50.0, 2048, l, lam, eps, BcKind::Outgoing);
        let rep = charge_residual(&sol, &f).unwrap();
        prop_assert!(rep.relative_residual < 1e-9);
    }

    #[test]
    fn carleman_lhs_is_nonnegative(t in 0.0f64..3.0, c in 3.0f64..8.0, phase in 0.0f64..6.3) {
        let g = Arc::new(RadialGrid::uniform(0.5, 12.0, 2048).unwrap());
        let mode = ModeParams::new(3, 2).unwrap();
        let u = RadialFunction::from_fn(g.clone(), |r| Complex64::from_polar(compact_bump((r - c) / 2.0), phase * r));
        let src = carleman_source(&u, mode, 1.0);
        let rep = carleman_identity_residual(&u, &WeightFunction::carleman_bracket(g), t, &src, mode).unwrap();
        prop_assert!(rep.lhs >= 0.0);
    }
}
