//! Conservation laws and weighted identities evaluated as quadrature residuals.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::fit::loglog_fit;
use crate::radial::{
    bracket, centered_derivative, centered_second_derivative, fmt_num, ModeParams, RadialFunction, RadialGrid,
};
use crate::resolvent::{radiation_parts, symmetrizing_weights, BcKind, ModeSolution};

/// Denominator floor of the relative residual.
pub const RESIDUAL_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResidualReport {
    pub identity_id: &'static str,
    pub n: u32,
    pub l: u32,
    pub lambda: f64,
    pub epsilon: f64,
    pub grid_points: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub relative_residual: f64,
    /// Boundary contribution included in `rhs` (zero for compactly supported cutoffs).
    pub boundary_term: f64,
}

impl IdentityResidualReport {
    pub const CSV_HEADER: &'static str = "identity_id,n,l,lambda,epsilon,N,lhs,rhs,residual,relative_residual";

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        identity_id: &'static str,
        mode: ModeParams,
        lambda: f64,
        epsilon: f64,
        grid_points: usize,
        lhs: f64,
        rhs: f64,
        boundary_term: f64,
    ) -> Self {
        let residual = (lhs - rhs).abs();
        let relative_residual = (residual / (lhs.abs() + rhs.abs() + RESIDUAL_FLOOR)).min(1.0);
        IdentityResidualReport {
            identity_id,
            n: mode.n,
            l: mode.l,
            lambda,
            epsilon,
            grid_points,
            lhs,
            rhs,
            residual,
            relative_residual,
            boundary_term,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.identity_id,
            self.n,
            self.l,
            fmt_num(self.lambda),
            fmt_num(self.epsilon),
            self.grid_points,
            fmt_num(self.lhs),
            fmt_num(self.rhs),
            fmt_num(self.residual),
            fmt_num(self.relative_residual)
        )
    }
}

/// `±ε Σ w|v|² = -Im Σ w v̄ g - (flux(r_max) - flux(r_min))` with the operator's symmetrizing weights.
///
/// The outer flux carries the weight factor of the last row, which is 1 when `θ = 0`.
pub fn charge_residual(sol: &ModeSolution, f: &RadialFunction) -> Result<IdentityResidualReport> {
    if !f.same_grid(&sol.v) {
        return Err(LabError::invalid("source and solution live on different grids"));
    }
    let p = &sol.problem;
    let w = symmetrizing_weights(p)?;
    let g = crate::resolvent::mode_source(f, &p.mode);
    let v = sol.v.values();
    let n = v.len();
    let h = p.grid.h();
    let mut mass = 0.0;
    let mut pairing = 0.0;
    let last = n - 1;
    // The Dirichlet row does not carry the equation at the last node.
    let top = if sol.bc == BcKind::Dirichlet { last } else { n };
    for i in 0..top {
        mass += w[i] * v[i].norm_sqr();
        pairing += w[i] * (v[i].conj() * g.values()[i]).im;
    }
    let (flux_min, flux_max) = sol.boundary_fluxes();
    let outer_weight = 2.0 * w[last] * (1.0 / h + 0.5 * p.profiles.theta[last]);
    let boundary = outer_weight * flux_max - flux_min;
    let lhs = p.branch.sign() * p.epsilon * mass;
    let rhs = -pairing - boundary;
    Ok(IdentityResidualReport::new("charge", p.mode, p.lambda, p.epsilon, n, lhs, rhs, boundary))
}

/// Effective forcing of `-v'' + L(L-1)/r² v - κ v = G` given the full mode equation, with `κ = λ` or `|z|²`.
fn effective_forcing(sol: &ModeSolution, dv: &[Complex64], shift: f64) -> Vec<Complex64> {
    let p = &sol.problem;
    let r = p.grid.r();
    let v = sol.v.values();
    let z2 = p.z() * p.z();
    let nn = p.mode.n as f64;
    (0..v.len())
        .map(|i| {
            let th = p.profiles.theta[i];
            sol.source.values()[i] - v[i] * p.profiles.potential[i] + (dv[i] - v[i] * ((nn - 1.0) / r[i])) * th
                + v[i] * (z2 - shift)
        })
        .collect()
}

fn check_cutoff(chi: &RadialFunction, sol: &ModeSolution) -> Result<Vec<f64>> {
    if !chi.same_grid(&sol.v) {
        return Err(LabError::invalid("cutoff and solution live on different grids"));
    }
    let c: Vec<f64> = chi.values().iter().map(|x| x.re).collect();
    let n = c.len();
    let scale = c.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let touches = c[..2].iter().chain(&c[n - 2..]).any(|x| x.abs() > 1e-14 * scale.max(f64::MIN_POSITIVE));
    if touches {
        return Err(LabError::invalid("cutoff support touches the grid boundary"));
    }
    Ok(c)
}

/// Radial Laplacian `χ'' + (n-1)χ'/r` of sampled `χ`, with `χ'` returned alongside.
fn radial_laplacian(chi: &[f64], grid: &RadialGrid, n: u32) -> (Vec<f64>, Vec<f64>) {
    let h = grid.h();
    let d1 = centered_derivative(chi, h);
    let d2 = centered_second_derivative(chi, h);
    let lap = (0..chi.len()).map(|i| d2[i] + (n as f64 - 1.0) * d1[i] / grid.r()[i]).collect();
    (d1, lap)
}

/// `∫eχ = λ∫qχ + ½∫qΔχ + ∫Re(ūF)χ` in the mode reduction.
pub fn lagrangean_residual(sol: &ModeSolution, chi: &RadialFunction) -> Result<IdentityResidualReport> {
    let c = check_cutoff(chi, sol)?;
    let p = &sol.problem;
    let grid = &p.grid;
    let r = grid.r();
    let v = sol.v.values();
    let dv = sol.v_r();
    let k = p.mode.half_power();
    let ang = p.mode.angular();
    let lam = p.lambda;
    let forcing = effective_forcing(sol, &dv, lam);
    let (_, lap) = radial_laplacian(&c, grid, p.mode.n);
    let n = v.len();
    let mut lhs_d = vec![0.0; n];
    let mut rhs_d = vec![0.0; n];
    for i in 0..n {
        let q = v[i].norm_sqr();
        let grad = dv[i] - v[i] * (k / r[i]);
        let e = grad.norm_sqr() + ang / (r[i] * r[i]) * q;
        lhs_d[i] = e * c[i];
        rhs_d[i] = lam * q * c[i] + 0.5 * q * lap[i] + (v[i].conj() * forcing[i]).re * c[i];
    }
    let lhs = grid.integrate(&lhs_d);
    let rhs = grid.integrate(&rhs_d);
    Ok(IdentityResidualReport::new("lagrangean", p.mode, lam, p.epsilon, n, lhs, rhs, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    MorawetzDefault,
    Carleman,
    Custom,
}

/// Real radial weight with derivative samples up to fourth order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    pub kind: WeightKind,
    pub grid: Arc<RadialGrid>,
    /// `[W, W', W'', W''', W'''']`.
    pub derivs: [Vec<f64>; 5],
}

impl WeightFunction {
    fn from_jet(kind: WeightKind, grid: Arc<RadialGrid>, jet: impl Fn(f64) -> [f64; 5]) -> Self {
        let samples: Vec<[f64; 5]> = grid.r().iter().map(|&r| jet(r)).collect();
        let derivs = std::array::from_fn(|j| samples.iter().map(|s| s[j]).collect());
        WeightFunction { kind, grid, derivs }
    }

    /// `W = r - (1+r)^{1-2σ}`.
    pub fn morawetz_default(grid: Arc<RadialGrid>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 0.5) {
            return Err(LabError::invalid(format!("sigma must lie in (0, 1/2), got {sigma}")));
        }
        let a = 1.0 - 2.0 * sigma;
        Ok(Self::from_jet(WeightKind::MorawetzDefault, grid, |r| {
            let s = 1.0 + r;
            [
                r - s.powf(a),
                1.0 - a * s.powf(-2.0 * sigma),
                2.0 * sigma * a * s.powf(-1.0 - 2.0 * sigma),
                -2.0 * sigma * a * (1.0 + 2.0 * sigma) * s.powf(-2.0 - 2.0 * sigma),
                2.0 * sigma * a * (1.0 + 2.0 * sigma) * (2.0 + 2.0 * sigma) * s.powf(-3.0 - 2.0 * sigma),
            ]
        }))
    }

    /// `w = ⟨r⟩ = (1+r²)^{1/2}`.
    pub fn carleman_bracket(grid: Arc<RadialGrid>) -> Self {
        Self::from_jet(WeightKind::Carleman, grid, |r| {
            let w = bracket(r);
            [w, r / w, w.powi(-3), -3.0 * r * w.powi(-5), (12.0 * r * r - 3.0) * w.powi(-7)]
        })
    }

    /// Weight from an analytic jet `r ↦ [W, W', W'', W''', W'''']`.
    pub fn custom_jet(grid: Arc<RadialGrid>, jet: impl Fn(f64) -> [f64; 5]) -> Result<Self> {
        let wf = Self::from_jet(WeightKind::Custom, grid, jet);
        if wf.derivs.iter().flatten().any(|x| !x.is_finite()) {
            return Err(LabError::NonFinite("custom weight"));
        }
        Ok(wf)
    }

    /// Weight from samples only; derivatives by repeated centered differences.
    pub fn custom_samples(grid: Arc<RadialGrid>, w: Vec<f64>) -> Result<Self> {
        if w.len() != grid.len() {
            return Err(LabError::invalid("weight samples do not match the grid"));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(LabError::NonFinite("custom weight"));
        }
        let h = grid.h();
        let d1 = centered_derivative(&w, h);
        let d2 = centered_second_derivative(&w, h);
        let d3 = centered_derivative(&d2, h);
        let d4 = centered_second_derivative(&d2, h);
        Ok(WeightFunction { kind: WeightKind::Custom, grid, derivs: [w, d1, d2, d3, d4] })
    }

    pub fn values(&self) -> &[f64] {
        &self.derivs[0]
    }

    pub fn as_radial(&self) -> RadialFunction {
        RadialFunction::new(self.grid.clone(), self.derivs[0].iter().map(|&x| x.into()).collect())
            .expect("weight samples match their grid")
    }

    /// `(ΔW, (ΔW)', Δ²W)` for the `n`-dimensional radial Laplacian.
    pub fn laplacians(&self, n: u32) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = n as f64 - 1.0;
        let r = self.grid.r();
        let [_, w1, w2, w3, w4] = &self.derivs;
        let mut lap = Vec::with_capacity(r.len());
        let mut dlap = Vec::with_capacity(r.len());
        let mut bilap = Vec::with_capacity(r.len());
        for i in 0..r.len() {
            let x = r[i];
            let l0 = w2[i] + m * w1[i] / x;
            let l1 = w3[i] + m * (w2[i] / x - w1[i] / (x * x));
            let l2 = w4[i] + m * (w3[i] / x - 2.0 * w2[i] / (x * x) + 2.0 * w1[i] / (x * x * x));
            lap.push(l0);
            dlap.push(l1);
            bilap.push(l2 + m * l1 / x);
        }
        (lap, dlap, bilap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MorawetzForm {
    /// `ε = 0` only; energy `λ = |z|²`.
    #[default]
    RealEnergy,
    /// Moves the `i Im(z²) u` term into the forcing so any `ε ≥ 0` closes.
    AbsorbedEpsilon,
}

struct MorawetzDensities {
    bulk_positive: Vec<f64>,
    bulk_forcing: Vec<f64>,
    flux: Vec<f64>,
}

fn morawetz_densities(sol: &ModeSolution, w: &WeightFunction) -> MorawetzDensities {
    let p = &sol.problem;
    let r = p.grid.r();
    let v = sol.v.values();
    let dv = sol.v_r();
    let k = p.mode.half_power();
    let ang = p.mode.angular();
    let lam = p.z().norm_sqr();
    let forcing = effective_forcing(sol, &dv, lam);
    let (lap, dlap, bilap) = w.laplacians(p.mode.n);
    let w1 = &w.derivs[1];
    let w2 = &w.derivs[2];
    let n = v.len();
    let mut out = MorawetzDensities { bulk_positive: vec![0.0; n], bulk_forcing: vec![0.0; n], flux: vec![0.0; n] };
    for i in 0..n {
        let x = r[i];
        let q = v[i].norm_sqr();
        let pr = dv[i] - v[i] * (k / x);
        let g = forcing[i];
        out.bulk_positive[i] = w2[i] * pr.norm_sqr() + w1[i] * ang / (x * x * x) * q - 0.25 * bilap[i] * q;
        out.bulk_forcing[i] = -0.5 * lap[i] * (v[i].conj() * g).re - w1[i] * (pr.conj() * g).re;
        out.flux[i] = w1[i] * 0.5 * (pr.norm_sqr() - ang / (x * x) * q + lam * q)
            + 0.5 * lap[i] * (v[i].conj() * pr).re
            - 0.25 * dlap[i] * q;
    }
    out
}

fn check_weight(w: &WeightFunction, sol: &ModeSolution) -> Result<()> {
    if !(Arc::ptr_eq(&w.grid, sol.v.grid()) || *w.grid == **sol.v.grid()) {
        return Err(LabError::invalid("weight and solution live on different grids"));
    }
    Ok(())
}

/// Pohozaev–Morawetz identity with weight `W` and cutoff `χ`:
/// `∫[W''|u_r|² + W'Λ/r³|u|² - ¼Δ²W|u|² - ½ΔW Re(ūG) - W' Re(ū_r G)]χ = -∫Pχ'`.
pub fn morawetz_residual(
    sol: &ModeSolution,
    w: &WeightFunction,
    chi: &RadialFunction,
    form: MorawetzForm,
) -> Result<IdentityResidualReport> {
    check_weight(w, sol)?;
    let c = check_cutoff(chi, sol)?;
    let p = &sol.problem;
    if form == MorawetzForm::RealEnergy && p.epsilon != 0.0 {
        return Err(LabError::invalid("the real-energy form needs epsilon = 0; select the absorbed form"));
    }
    let grid = &p.grid;
    let d = morawetz_densities(sol, w);
    let dc = centered_derivative(&c, grid.h());
    let n = c.len();
    let lhs_d: Vec<f64> = (0..n).map(|i| (d.bulk_positive[i] + d.bulk_forcing[i]) * c[i]).collect();
    let rhs_d: Vec<f64> = (0..n).map(|i| -d.flux[i] * dc[i]).collect();
    let lhs = grid.integrate(&lhs_d);
    let rhs = grid.integrate(&rhs_d);
    Ok(IdentityResidualReport::new("morawetz", p.mode, p.lambda, p.epsilon, n, lhs, rhs, 0.0))
}

/// `∫[W''|u_r|² + W'Λ/r³|u|² - ¼Δ²W|u|²]χ`, the quadratic bulk the weight is designed to keep positive.
pub fn morawetz_bulk(sol: &ModeSolution, w: &WeightFunction, chi: &RadialFunction) -> Result<f64> {
    check_weight(w, sol)?;
    let c = check_cutoff(chi, sol)?;
    let d = morawetz_densities(sol, w);
    let dens: Vec<f64> = d.bulk_positive.iter().zip(&c).map(|(a, b)| a * b).collect();
    Ok(sol.problem.grid.integrate(&dens))
}

/// Fitted `c` in `-Δ²W ≥ c(1+r)^{-3-2σ}` and `W'' ≥ c(1+r)^{-1-2σ}` for the default weight on `[r_lo, r_hi]`.
pub fn morawetz_sign_constants(sigma: f64, n: u32, r_lo: f64, r_hi: f64, samples: usize) -> Result<(f64, f64)> {
    let grid = crate::radial::make_grid(r_lo, r_hi, samples)?;
    let w = WeightFunction::morawetz_default(grid.clone(), sigma)?;
    let (_, _, bilap) = w.laplacians(n);
    let mut c_bi = f64::INFINITY;
    let mut c_hess = f64::INFINITY;
    for (i, &r) in grid.r().iter().enumerate() {
        c_bi = c_bi.min(-bilap[i] * (1.0 + r).powf(3.0 + 2.0 * sigma));
        c_hess = c_hess.min(w.derivs[2][i] * (1.0 + r).powf(1.0 + 2.0 * sigma));
    }
    Ok((c_bi, c_hess))
}

/// `G = -u'' - (n-1)u'/r + Λ/r² u - λu` by centered differences; zero at the two end nodes.
pub fn carleman_source(u_c: &RadialFunction, mode: ModeParams, lambda: f64) -> RadialFunction {
    let grid = u_c.grid();
    let h = grid.h();
    let u = u_c.values();
    let d1 = centered_derivative(u, h);
    let d2 = centered_second_derivative(u, h);
    let m = mode.n as f64 - 1.0;
    let ang = mode.angular();
    let last = u.len() - 1;
    let vals = grid
        .r()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i == 0 || i == last {
                Complex64::new(0.0, 0.0)
            } else {
                -d2[i] - d1[i] * (m / r) + u[i] * (ang / (r * r) - lambda)
            }
        })
        .collect();
    RadialFunction::new(grid.clone(), vals).expect("source matches its grid")
}

/// Carleman identity for the conjugated operator with weight `t w`, in `u` variables:
/// `‖U‖² + 2t∫[w''|ψ_r|² + (w'/r)Λ/r²|ψ|²] + 2t³∫w''w'²|ψ|² = ½t∫Δ²w|ψ|² + Re∫e^{tw}G Ū`.
pub fn carleman_identity_residual(
    u_c: &RadialFunction,
    w: &WeightFunction,
    t: f64,
    g_src: &RadialFunction,
    mode: ModeParams,
) -> Result<IdentityResidualReport> {
    if !u_c.same_grid(g_src) || !(Arc::ptr_eq(&w.grid, u_c.grid()) || *w.grid == **u_c.grid()) {
        return Err(LabError::invalid("profile, weight and source live on different grids"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LabError::invalid(format!("Carleman parameter must be nonnegative, got {t}")));
    }
    let grid = u_c.grid();
    let u = u_c.values();
    let n = u.len();
    let scale = u_c.max_abs();
    let edge = u[..3].iter().chain(&u[n - 3..]).any(|x| x.norm() > 1e-12 * scale.max(f64::MIN_POSITIVE));
    if edge {
        return Err(LabError::invalid("Carleman profile must vanish near both grid ends"));
    }
    let r = grid.r();
    let du = centered_derivative(u, grid.h());
    let (lap, _, bilap) = w.laplacians(mode.n);
    let [w0, w1, w2, _, _] = &w.derivs;
    let ang = mode.angular();
    let m = mode.n as f64 - 1.0;
    // Common rescaling keeps e^{2tw} in range; the identity is homogeneous of degree two.
    let shift = (0..n).filter(|&i| u[i].norm() > 0.0).map(|i| t * w0[i]).fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let mut lhs_d = vec![0.0; n];
    let mut rhs_d = vec![0.0; n];
    for i in 0..n {
        let x = r[i];
        let meas = x.powf(m);
        let e = (t * w0[i] - shift).exp();
        let psi = u[i] * e;
        let psi_r = (du[i] + u[i] * (t * w1[i])) * e;
        let big_u = (du[i] * (2.0 * t * w1[i]) + u[i] * (2.0 * t * t * w1[i] * w1[i] + t * lap[i])) * e;
        let q = psi.norm_sqr();
        lhs_d[i] = meas
            * (big_u.norm_sqr()
                + 2.0 * t * (w2[i] * psi_r.norm_sqr() + w1[i] / x * ang / (x * x) * q)
                + 2.0 * t.powi(3) * w2[i] * w1[i] * w1[i] * q);
        rhs_d[i] = meas * (0.5 * t * bilap[i] * q + (g_src.values()[i] * e * big_u.conj()).re);
    }
    let lhs = grid.integrate(&lhs_d);
    let rhs = grid.integrate(&rhs_d);
    Ok(IdentityResidualReport::new("carleman", mode, f64::NAN, 0.0, n, lhs, rhs, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SommerfeldGauge {
    pub gauge_value: f64,
    pub tail_growth_exponent: f64,
    /// `(R, gauge over [2 r0, R])` samples behind the exponent fit.
    pub tail_samples: Vec<(f64, f64)>,
}

/// Number of cumulative radii in the tail fit.
pub const TAIL_SAMPLES: usize = 16;

/// Angular plus radiation-condition norms in `H^{0,-1/2+σ'}` over `r ≥ 2 r0`, against `condition`.
pub fn sommerfeld_gauge(
    sol: &ModeSolution,
    condition: BcKind,
    sigma_prime: f64,
    sigma: f64,
    r0: f64,
) -> Result<SommerfeldGauge> {
    if !(sigma_prime > 0.0) || sigma_prime >= sigma {
        return Err(LabError::invalid(format!("sigma' must lie in (0, {sigma}), got {sigma_prime}")));
    }
    if condition == BcKind::Dirichlet {
        return Err(LabError::invalid("radiation gauge needs an outgoing or incoming condition"));
    }
    let m = -0.5 + sigma_prime;
    let r_lo = 2.0 * r0;
    let r_max = sol.v.grid().r_max();
    if !(r_lo < r_max / 8.0) {
        return Err(LabError::invalid(format!("2 r0 = {r_lo} leaves no tail window below r_max = {r_max}")));
    }
    let total = |hi: f64| {
        let (a, b) = radiation_parts(sol, condition, m, r_lo, hi);
        a + b
    };
    let gauge_value = total(f64::INFINITY);
    let tail_samples: Vec<(f64, f64)> = (0..TAIL_SAMPLES)
        .map(|j| {
            let rr = r_max / 8.0 * 8f64.powf(j as f64 / (TAIL_SAMPLES - 1) as f64);
            (rr, total(rr))
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = tail_samples.iter().copied().unzip();
    let tail_growth_exponent = if ys.iter().all(|&y| y > 0.0) { loglog_fit(&xs, &ys)?.slope } else { 0.0 };
    Ok(SommerfeldGauge { gauge_value, tail_growth_exponent, tail_samples })
}
