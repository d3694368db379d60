//! Constructive counterexamples: the zero-energy Bessel matching blowup and the equatorial quasimode.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::fit::{linear_fit, loglog_fit, LinearFit};
use crate::radial::{
    fmt_num, smooth_step_jet, weighted_norm, ModeParams, Profiles, RadialFunction, RadialGrid, WeightSpec,
};
use crate::resolvent::{
    assemble_mode_operator, sturm_eigencount, BcKind, Branch, ModeProblem,
};

/// Interval `[start, end]` over which the exponent blends from `L` to `1 - L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendWindow {
    pub start: f64,
    pub end: f64,
}

impl Default for BlendWindow {
    fn default() -> Self {
        BlendWindow { start: 0.5, end: 1.0 }
    }
}

/// Zero-energy mode `v = r^{p(r)}`, `p = L - (2L-1)η((r-a)/(b-a))`, with the potential that makes it exact.
#[derive(Debug, Clone)]
pub struct MatchedMode {
    pub mode: ModeParams,
    pub window: BlendWindow,
    pub grid: Arc<RadialGrid>,
    pub v: RadialFunction,
    /// Closed-form potential samples.
    pub potential: Vec<f64>,
}

impl MatchedMode {
    fn exponent_jet(&self, r: f64) -> [f64; 3] {
        let big_l = self.mode.big_l();
        let w = self.window.end - self.window.start;
        let [e0, e1, e2] = smooth_step_jet((r - self.window.start) / w);
        let k = 2.0 * big_l - 1.0;
        [big_l - k * e0, -k * e1 / w, -k * e2 / (w * w)]
    }

    /// `[v, v', v'']` in closed form.
    pub fn profile_jet(&self, r: f64) -> [f64; 3] {
        let [p, p1, p2] = self.exponent_jet(r);
        let lr = r.ln();
        let v = (p * lr).exp();
        let d1 = p1 * lr + p / r;
        let d2 = p2 * lr + 2.0 * p1 / r - p / (r * r);
        [v, d1 * v, (d2 + d1 * d1) * v]
    }

    /// `V = φ'' + φ'² - L(L-1)/r²` with `φ = p ln r`; exactly zero off the blend window.
    pub fn potential_at(&self, r: f64) -> f64 {
        if r <= self.window.start || r >= self.window.end {
            return 0.0;
        }
        let [p, p1, p2] = self.exponent_jet(r);
        let lr = r.ln();
        let d1 = p1 * lr + p / r;
        let d2 = p2 * lr + 2.0 * p1 / r - p / (r * r);
        d2 + d1 * d1 - self.mode.centrifugal() / (r * r)
    }

    /// Same construction sampled on another grid.
    pub fn on_grid(&self, grid: Arc<RadialGrid>) -> MatchedMode {
        let mut out = MatchedMode {
            mode: self.mode,
            window: self.window,
            grid: grid.clone(),
            v: RadialFunction::zeros(grid.clone()),
            potential: Vec::new(),
        };
        out.v = RadialFunction::from_real_fn(grid.clone(), |r| out.profile_jet(r)[0]);
        out.potential = grid.r().iter().map(|&r| out.potential_at(r)).collect();
        out
    }

    /// `max |v'' - L(L-1)v/r² - Vv| / max |v''|` over grid nodes, from the closed forms.
    pub fn kernel_residual_analytic(&self) -> f64 {
        let c = self.mode.centrifugal();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for &r in self.grid.r() {
            let [v, _, v2] = self.profile_jet(r);
            let res = v2 - c / (r * r) * v - self.potential_at(r) * v;
            num = num.max(res.abs() / v.abs().max(f64::MIN_POSITIVE));
            den = den.max(v2.abs() / v.abs().max(f64::MIN_POSITIVE));
        }
        num / den.max(f64::MIN_POSITIVE)
    }

    /// Relative residual of the three-point operator with the closed-form `V` on `v`, interior rows.
    ///
    /// Each row is scaled by `|v_i|` so the power-law ends do not swamp the blend region.
    pub fn kernel_residual_discrete(&self) -> f64 {
        let h = self.grid.h();
        let r = self.grid.r();
        let v = self.v.values();
        let c = self.mode.centrifugal();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 1..r.len() - 1 {
            let d2 = (v[i + 1] - v[i] * 2.0 + v[i - 1]).re / (h * h);
            let scale = v[i].re.abs().max(f64::MIN_POSITIVE);
            let res = d2 - (c / (r[i] * r[i]) + self.potential[i]) * v[i].re;
            num = num.max(res.abs() / scale);
            den = den.max(d2.abs() / scale);
        }
        num / den.max(f64::MIN_POSITIVE)
    }

    /// Grid-consistent potential `V_h = -(A₀v)/v`, where `A₀` is the assembled free operator at zero energy.
    ///
    /// With `V_h` the discrete operator annihilates `v` on every row but the last.
    pub fn discrete_potential(&self) -> Result<Vec<f64>> {
        let problem = ModeProblem::free(self.mode, 0.0, 0.0, Branch::Plus, self.grid.clone())?;
        let op = assemble_mode_operator(&problem, BcKind::Outgoing)?;
        let av = op.apply(self.v.values());
        let v = self.v.values();
        let last = v.len() - 1;
        Ok((0..v.len())
            .map(|i| if i == last { self.potential[i] } else { -av[i].re / v[i].re })
            .collect())
    }
}

/// Matched zero-energy mode for even `l ≥ 4` on `grid`.
pub fn build_bessel_matching(l: u32, n: u32, window: BlendWindow, grid: Arc<RadialGrid>) -> Result<MatchedMode> {
    if l % 2 != 0 || l < 4 {
        return Err(LabError::invalid(format!("l must be even and at least 4, got {l}")));
    }
    if !(window.start >= 0.5 && window.end <= 1.0 && window.start < window.end) {
        return Err(LabError::invalid(format!(
            "blend window [{}, {}] must lie inside [1/2, 1]",
            window.start, window.end
        )));
    }
    let mode = ModeParams::new(n, l)?;
    let seed = MatchedMode {
        mode,
        window,
        grid: grid.clone(),
        v: RadialFunction::zeros(grid.clone()),
        potential: Vec::new(),
    };
    Ok(seed.on_grid(grid))
}

/// `λ_m = m^{-l/10}`.
pub fn lambda_m(m: u32, l: u32) -> f64 {
    (m as f64).powf(-(l as f64) / 10.0)
}

/// Largest relative distance between the re-solved and the closed-form `u_m` before flagging.
pub const CROSS_VALIDATION_TOL: f64 = 1e-2;

/// Grid spacing used by the probes.
pub const PROBE_SPACING: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeParams {
    pub sigma: f64,
    /// `ε_m = λ_m · eps_ratio`.
    pub eps_ratio: f64,
    pub spacing: f64,
    /// Grid reaches `reach · m`.
    pub reach: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams { sigma: 0.25, eps_ratio: 0.01, spacing: PROBE_SPACING, reach: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupReport {
    pub m: u32,
    pub l: u32,
    pub lambda_m: f64,
    pub eps_m: f64,
    pub f_norm: f64,
    pub u_norm: f64,
    pub ratio: f64,
    /// `max |defect|` outside `[m(1-2h), 2m(1+2h)]` over `max |defect|`, for the ε-free part of `f_m`.
    pub support_leak: f64,
    /// Relative `H^{0,-1/2-σ}` distance between the resolvent solve and `u_m`.
    pub cross_validation_error: f64,
    /// `max|A x - f| / (‖A‖ ‖x‖ + ‖f‖)` of that solve.
    pub solve_backward_error: f64,
    pub flag: Option<&'static str>,
}

impl BlowupReport {
    pub const CSV_HEADER: &'static str = "m,l,lambda_m,eps_m,f_norm,u_norm,ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.m,
            self.l,
            fmt_num(self.lambda_m),
            fmt_num(self.eps_m),
            fmt_num(self.f_norm),
            fmt_num(self.u_norm),
            fmt_num(self.ratio)
        )
    }
}

/// `χ_m(r) = 1 - η((r - m)/m)`: one on `r ≤ m`, zero on `r ≥ 2m`, as `[χ, χ', χ'']`.
pub fn cutoff_jet(m: f64, r: f64) -> [f64; 3] {
    let [e0, e1, e2] = smooth_step_jet((r - m) / m);
    [1.0 - e0, -e1 / m, -e2 / (m * m)]
}

struct Probe {
    problem: ModeProblem,
    u_m: RadialFunction,
    defect: Vec<Complex64>,
    source: RadialFunction,
}

fn build_probe(base: &MatchedMode, m: u32, p: &ProbeParams) -> Result<Probe> {
    if m < 2 {
        return Err(LabError::invalid(format!("m must be at least 2, got {m}")));
    }
    let mf = m as f64;
    let r_max = p.reach * mf;
    if p.reach < 8.0 {
        return Err(LabError::invalid(format!("probe grid must reach at least 8m, got {}m", p.reach)));
    }
    let lam = lambda_m(m, base.mode.l);
    let eps = lam * p.eps_ratio;
    if !(eps < lam) {
        return Err(LabError::invalid("eps_m must be smaller than lambda_m"));
    }
    let points = (r_max / p.spacing).round() as usize;
    let grid = Arc::new(RadialGrid::from_origin(r_max, points)?);
    let mm = base.on_grid(grid.clone());
    let vh = mm.discrete_potential()?;
    let pot: Vec<f64> = grid.r().iter().zip(&vh).map(|(&r, &v)| v + lam * cutoff_jet(mf, r)[0]).collect();
    let profiles = Arc::new(Profiles::new(pot, vec![0.0; grid.len()], 0.0, 1.0)?);
    let problem = ModeProblem::new(base.mode, profiles, lam, eps, Branch::Plus, grid.clone())?;
    let mut defect = Vec::with_capacity(grid.len());
    let mut u_vals = Vec::with_capacity(grid.len());
    let mut src = Vec::with_capacity(grid.len());
    for &r in grid.r() {
        let [v, v1, _] = mm.profile_jet(r);
        let [c0, c1, c2] = cutoff_jet(mf, r);
        let d = -2.0 * v1 * c1 - v * c2 + lam * (c0 - 1.0) * c0 * v;
        defect.push(Complex64::new(d, 0.0));
        u_vals.push(Complex64::new(v * c0, 0.0));
        src.push(Complex64::new(d, -eps * v * c0));
    }
    Ok(Probe {
        problem,
        u_m: RadialFunction::new(grid.clone(), u_vals)?,
        defect,
        source: RadialFunction::new(grid, src)?,
    })
}

/// Cut the matched mode off at `m`, measure `‖u_m‖/‖f_m‖`, and re-solve for `u_m` from `f_m`.
///
/// `f_m = (-∂² + L(L-1)/r² + V + λχ_m - λ - iε)(vχ_m)` in closed form; the real part is
/// supported in `[m, 2m]`.
pub fn perturb_and_probe(base: &MatchedMode, m: u32, params: &ProbeParams) -> Result<BlowupReport> {
    let probe = build_probe(base, m, params)?;
    let mode = base.mode;
    let grid = probe.problem.grid.clone();
    let mf = m as f64;
    let h = grid.h();
    let u_norm = weighted_norm(&probe.u_m, WeightSpec::l2(-0.5 - params.sigma), &mode)?;
    let f_norm = weighted_norm(&probe.source, WeightSpec::l2(0.5 + params.sigma), &mode)?;
    let peak = probe.defect.iter().map(|d| d.norm()).fold(0.0, f64::max);
    let (lo, hi) = (mf * (1.0 - 2.0 * h), 2.0 * mf * (1.0 + 2.0 * h));
    let outside = grid
        .r()
        .iter()
        .zip(&probe.defect)
        .filter(|(&r, _)| r < lo || r > hi)
        .map(|(_, d)| d.norm())
        .fold(0.0, f64::max);
    let support_leak = if peak > 0.0 { outside / peak } else { 0.0 };

    // Direct elimination: the solver's absolute acceptance gate sits at the roundoff floor on this grid.
    let op = assemble_mode_operator(&probe.problem, BcKind::Outgoing)?;
    let (cross_validation_error, solve_backward_error) = match op.solve(probe.source.values()) {
        Ok((x, _)) => {
            let ax = op.apply(&x);
            let res = ax.iter().zip(probe.source.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let a_norm = (0..op.len())
                .map(|i| op.sub[i].norm() + op.diag[i].norm() + op.sup[i].norm())
                .fold(0.0, f64::max);
            let x_norm = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let b_norm = probe.source.max_abs();
            let backward = res / (a_norm * x_norm + b_norm).max(f64::MIN_POSITIVE);
            let diff: Vec<Complex64> = x.iter().zip(probe.u_m.values()).map(|(a, b)| a - b).collect();
            let diff = RadialFunction::new(grid.clone(), diff)?;
            (weighted_norm(&diff, WeightSpec::l2(-0.5 - params.sigma), &mode)? / u_norm, backward)
        }
        Err(e) if !e.is_validation() => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    let mut flag: Option<&'static str> = None;
    if !(cross_validation_error <= CROSS_VALIDATION_TOL) {
        flag = Some("cross_validation_failed");
    }
    let ratio = if f_norm > 0.0 { u_norm / f_norm } else { f64::NAN };
    if f_norm == 0.0 {
        flag = Some("zero_data");
    }
    Ok(BlowupReport {
        m,
        l: mode.l,
        lambda_m: probe.problem.lambda,
        eps_m: probe.problem.epsilon,
        f_norm,
        u_norm,
        ratio,
        support_leak,
        cross_validation_error,
        solve_backward_error,
        flag,
    })
}

/// Slope of `log ratio` against `log λ_m` over a sweep.
pub fn blowup_exponent(reports: &[BlowupReport]) -> Result<LinearFit> {
    let x: Vec<f64> = reports.iter().map(|r| r.lambda_m).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.ratio).collect();
    loglog_fit(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralSanity {
    /// Perturbed-operator eigenvalues in `[-λ_m/2, λ_m/2)`.
    pub zero_window_count: usize,
    pub negative_count_base: usize,
    pub negative_count_perturbed: usize,
}

impl SpectralSanity {
    pub fn negative_count_stable(&self) -> bool {
        self.negative_count_base == self.negative_count_perturbed
    }
}

/// Sturm counts of the Dirichlet mode operator with `V_h` and with `V_h + λ_m χ_m`.
pub fn spectral_sanity(base: &MatchedMode, m: u32, params: &ProbeParams) -> Result<SpectralSanity> {
    let probe = build_probe(base, m, params)?;
    let lam = probe.problem.lambda;
    let perturbed = ModeProblem { epsilon: 0.0, lambda: 0.0, ..probe.problem.clone() };
    let mf = m as f64;
    let grid = perturbed.grid.clone();
    let base_pot: Vec<f64> = grid
        .r()
        .iter()
        .zip(&perturbed.profiles.potential)
        .map(|(&r, &v)| v - lam * cutoff_jet(mf, r)[0])
        .collect();
    let base_problem = ModeProblem {
        profiles: Arc::new(Profiles::new(base_pot, vec![0.0; grid.len()], 0.0, 1.0)?),
        ..perturbed.clone()
    };
    Ok(SpectralSanity {
        zero_window_count: sturm_eigencount(&perturbed, -0.5 * lam, 0.5 * lam)?,
        negative_count_base: sturm_eigencount(&base_problem, f64::NEG_INFINITY, -lam)?,
        negative_count_perturbed: sturm_eigencount(&perturbed, f64::NEG_INFINITY, -lam)?,
    })
}

/// `sup_r (1+r)^{1+σ₀}|V_m(r)|` with the closed-form `V`.
pub fn potential_family_sup(base: &MatchedMode, m: u32, sigma0: f64) -> f64 {
    let lam = lambda_m(m, base.mode.l);
    let mf = m as f64;
    base.grid
        .r()
        .iter()
        .chain(std::iter::once(&(2.0 * mf)))
        .map(|&r| (1.0 + r).powf(1.0 + sigma0) * (base.potential_at(r) + lam * cutoff_jet(mf, r)[0]).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasimodeParams {
    pub l: u32,
    pub n: u32,
    /// Cutoff vanishes for `θ < support_start` (and symmetrically near `π`).
    pub support_start: f64,
    /// Cutoff equals one on `[plateau_start, π - plateau_start]`.
    pub plateau_start: f64,
    /// Number of θ intervals on `[0, π]`; a multiple of 12.
    pub intervals: usize,
}

impl QuasimodeParams {
    pub fn new(l: u32, n: u32) -> Self {
        QuasimodeParams { l, n, support_start: PI / 8.0, plateau_start: PI / 4.0, intervals: 3 << 12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasimodeProfile {
    pub l: u32,
    pub n: u32,
    /// Interior nodes `θ_i = iπ/N`, `0 < i < N`.
    pub theta: Vec<f64>,
    /// `sin^l θ cos θ`, with `Y_l` of unit norm on the small sphere.
    pub u: Vec<f64>,
    pub chi: Vec<f64>,
    pub lambda_l: u64,
    pub near_equator_mass: f64,
    pub tail_mass: f64,
    pub full_mass: f64,
    /// `‖(A_l - λ_l)(χU)‖` from the closed-form commutator.
    pub residual_norm: f64,
    pub cutoff_norm: f64,
    /// Three-point residual of `(A_l - λ_l)U` on `[π/3, 2π/3]`.
    pub eigen_check: f64,
}

impl QuasimodeProfile {
    pub const CSV_HEADER: &'static str = "l,n,lambda_l,near_mass,tail_mass,residual_norm,quasimode_ratio";

    pub fn quasimode_ratio(&self) -> f64 {
        self.residual_norm / self.cutoff_norm
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.l,
            self.n,
            self.lambda_l,
            fmt_num(self.near_equator_mass),
            fmt_num(self.tail_mass),
            fmt_num(self.residual_norm),
            fmt_num(self.quasimode_ratio())
        )
    }
}

/// Symmetric cutoff `[χ, χ', χ'']` at `θ`.
fn theta_cutoff(p: &QuasimodeParams, theta: f64) -> [f64; 3] {
    let w = p.plateau_start - p.support_start;
    let (t, sign) = if theta <= 0.5 * PI { (theta, 1.0) } else { (PI - theta, -1.0) };
    let [e0, e1, e2] = smooth_step_jet((t - p.support_start) / w);
    [e0, sign * e1 / w, e2 / (w * w)]
}

/// Sectorial harmonic `sin^l θ cos θ` with its cutoff mass split and quasimode residual.
pub fn quasimode_profile(p: &QuasimodeParams) -> Result<QuasimodeProfile> {
    if p.l < 4 {
        return Err(LabError::invalid(format!("l must be at least 4, got {}", p.l)));
    }
    if p.n < 2 {
        return Err(LabError::invalid(format!("sphere dimension must be at least 2, got {}", p.n)));
    }
    if !(p.support_start > 0.0 && p.support_start < p.plateau_start && p.plateau_start <= 0.25 * PI) {
        return Err(LabError::invalid(format!(
            "cutoff [{}, {}] must satisfy 0 < start < plateau <= π/4",
            p.support_start, p.plateau_start
        )));
    }
    if p.intervals < 48 || p.intervals % 12 != 0 {
        return Err(LabError::invalid("θ intervals must be a multiple of 12, at least 48"));
    }
    let big_n = p.intervals;
    let h = PI / big_n as f64;
    let l = p.l as f64;
    let nn = p.n as f64;
    let lambda_l = (p.l as u64 + 1) * (p.l as u64 + p.n as u64);
    let lam = lambda_l as f64;
    let ang = l * (l + nn - 2.0);
    let theta: Vec<f64> = (1..big_n).map(|i| i as f64 * h).collect();
    let mut u = Vec::with_capacity(theta.len());
    let mut chi = Vec::with_capacity(theta.len());
    let mut mass_d = Vec::with_capacity(theta.len());
    let mut res_d = Vec::with_capacity(theta.len());
    let mut cut_d = Vec::with_capacity(theta.len());
    for &t in &theta {
        let (s, c) = t.sin_cos();
        let meas = s.powf(nn - 1.0);
        let uu = s.powf(l) * c;
        let du = l * s.powf(l - 1.0) * c * c - s.powf(l + 1.0);
        let [x0, x1, x2] = theta_cutoff(p, t);
        let r = -x2 * uu - 2.0 * x1 * du - (nn - 1.0) * (c / s) * x1 * uu;
        u.push(uu);
        chi.push(x0);
        mass_d.push(uu * uu * meas);
        res_d.push(r * r * meas);
        cut_d.push((x0 * uu).powi(2) * meas);
    }
    // Node θ_i sits at index i - 1; ends contribute zero.
    let trap = |d: &[f64], a: usize, b: usize| -> f64 {
        let inner: f64 = (a + 1..b).map(|i| d[i - 1]).sum();
        let end = |i: usize| if i == 0 || i == big_n { 0.0 } else { d[i - 1] };
        h * (inner + 0.5 * (end(a) + end(b)))
    };
    let q1 = big_n / 4;
    let q3 = 3 * big_n / 4;
    let full_mass = trap(&mass_d, 0, big_n);
    let near_equator_mass = trap(&mass_d, q1, q3);
    let tail_mass = trap(&mass_d, 0, q1) + trap(&mass_d, q3, big_n);
    let residual_norm = trap(&res_d, 0, big_n).sqrt();
    let cutoff_norm = trap(&cut_d, 0, big_n).sqrt();

    let (e_lo, e_hi) = (big_n / 3, 2 * big_n / 3);
    let mut eig_d = vec![0.0; theta.len()];
    for i in e_lo..=e_hi {
        let j = i - 1;
        let t = theta[j];
        let (s, c) = t.sin_cos();
        let d2 = (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (h * h);
        let d1 = (u[j + 1] - u[j - 1]) / (2.0 * h);
        let r = -d2 - (nn - 1.0) * (c / s) * d1 + (ang / (s * s) - lam) * u[j];
        eig_d[j] = r * r * s.powf(nn - 1.0);
    }
    let eigen_check = trap(&eig_d, e_lo, e_hi).sqrt();
    Ok(QuasimodeProfile {
        l: p.l,
        n: p.n,
        theta,
        u,
        chi,
        lambda_l,
        near_equator_mass,
        tail_mass,
        full_mass,
        residual_norm,
        cutoff_norm,
        eigen_check,
    })
}

/// Fits over a quasimode sweep: `log near_mass` vs `log λ_l`, and `log quasimode_ratio` vs `√λ_l`.
pub fn quasimode_fits(profiles: &[QuasimodeProfile]) -> Result<(LinearFit, LinearFit)> {
    let lam: Vec<f64> = profiles.iter().map(|p| p.lambda_l as f64).collect();
    let near: Vec<f64> = profiles.iter().map(|p| p.near_equator_mass).collect();
    let sq: Vec<f64> = lam.iter().map(|x| x.sqrt()).collect();
    let lr: Vec<f64> = profiles.iter().map(|p| p.quasimode_ratio().ln()).collect();
    Ok((loglog_fit(&lam, &near)?, linear_fit(&sq, &lr)?))
}
