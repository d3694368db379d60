//! Time evolution of one radial mode: Crank–Nicolson Schrödinger flow, leapfrog waves, and the
//! local observables, smoothing integrals, decay fits and Morawetz energies measured on them.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::fit::loglog_fit;
use crate::linalg::{SymTridiagonal, ThomasFactors, Tridiagonal};
use crate::radial::{fmt_num, smooth_step, weighted_norm, ModeParams, RadialFunction, RadialGrid, WeightSpec};
use crate::resolvent::{dirichlet_rows, mode_source, solve_resolvent_mode, symmetrizing_weights, BcKind, Branch, ModeProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    CrankNicolson,
    Leapfrog,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::CrankNicolson => "crank_nicolson",
            Scheme::Leapfrog => "leapfrog",
        }
    }
}

/// Stored states of one run. States are `v = r^{(n-1)/2} u` on the full grid, zero at `r_max`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub mode: ModeParams,
    pub grid: Arc<RadialGrid>,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<RadialFunction>,
    /// `v_t` at the stored times (wave runs only).
    pub velocities: Option<Vec<RadialFunction>>,
    /// Per-step conserved quantity: weighted norm (Schrödinger) or staggered energy (wave).
    pub conserved_log: Vec<f64>,
    /// Quadrature weights that make the discrete operator symmetric.
    pub weights: Vec<f64>,
    /// Last two time levels `(v^{N-1}, v^N)` of a wave run, for exact restarts.
    pub last_levels: Option<(Vec<Complex64>, Vec<Complex64>)>,
    pub flags: Vec<&'static str>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(Σ w|v|²)^{1/2}` at stored index `i`.
    pub fn l2_norm(&self, i: usize) -> f64 {
        weighted_sq(&self.weights, self.states[i].values()).sqrt()
    }

    pub fn final_state(&self) -> &RadialFunction {
        self.states.last().expect("trajectory stores the initial state")
    }
}

fn weighted_sq(w: &[f64], v: &[Complex64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b.norm_sqr()).sum()
}

/// Smooth imaginary sponge `W(r) = strength · η((r - start·r_max)/((1-start)·r_max))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorber {
    pub start_fraction: f64,
    pub strength: f64,
}

/// Sponge strength: a width-4 Gaussian packet with wavenumber 2 launched at `0.4 r_max` keeps < 1e-4 of its
/// L² norm after `0.4 r_max` time units.
pub const DEFAULT_ABSORBER_STRENGTH: f64 = 4.0;

impl Default for Absorber {
    fn default() -> Self {
        Absorber { start_fraction: 0.8, strength: DEFAULT_ABSORBER_STRENGTH }
    }
}

impl Absorber {
    pub fn profile(&self, grid: &RadialGrid) -> Vec<f64> {
        let r_max = grid.r_max();
        let start = self.start_fraction * r_max;
        let width = (1.0 - self.start_fraction) * r_max;
        grid.r().iter().map(|&r| self.strength * smooth_step((r - start) / width)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveParams {
    /// Time step; negative values run backwards.
    pub dt: f64,
    pub steps: usize,
    /// Store every `store_every`-th level (the initial level is always stored).
    pub store_every: usize,
}

impl EvolveParams {
    pub fn new(dt: f64, t_final: f64, store_every: usize) -> Result<Self> {
        if !(dt != 0.0) || !dt.is_finite() {
            return Err(LabError::invalid(format!("time step must be finite and nonzero, got {dt}")));
        }
        if !(t_final >= 0.0) {
            return Err(LabError::invalid(format!("final time must be nonnegative, got {t_final}")));
        }
        let steps = (t_final / dt.abs()).round() as usize;
        Ok(EvolveParams { dt, steps, store_every: store_every.max(1) })
    }
}

/// Real Dirichlet rows on nodes `0..N-1` and the matching symmetrizing weights.
struct ModeOperator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    weights: Vec<f64>,
}

impl ModeOperator {
    fn new(problem: &ModeProblem) -> Result<Self> {
        if problem.epsilon != 0.0 {
            return Err(LabError::invalid("evolution uses the epsilon = 0 operator"));
        }
        let (sub, diag, sup) = dirichlet_rows(problem);
        let mut weights = symmetrizing_weights(problem)?;
        let last = weights.len() - 1;
        weights[last] = 0.0;
        Ok(ModeOperator { sub, diag, sup, weights })
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let m = self.len();
        for i in 0..m {
            let mut y = x[i] * self.diag[i];
            if i > 0 {
                y += x[i - 1] * self.sub[i];
            }
            if i + 1 < m {
                y += x[i + 1] * self.sup[i];
            }
            out[i] = y;
        }
    }

    /// Gershgorin bound on the spectrum of the symmetrized operator.
    fn spectral_bound(&self) -> f64 {
        let m = self.len();
        (0..m)
            .map(|i| {
                let left = if i > 0 { (self.sub[i] * self.sup[i - 1]).abs().sqrt() } else { 0.0 };
                let right = if i + 1 < m { (self.sup[i] * self.sub[i + 1]).abs().sqrt() } else { 0.0 };
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }
}

fn check_state(problem: &ModeProblem, v: &RadialFunction) -> Result<()> {
    if !(Arc::ptr_eq(v.grid(), &problem.grid) || **v.grid() == *problem.grid) {
        return Err(LabError::invalid("initial state and problem live on different grids"));
    }
    if !v.is_finite() {
        return Err(LabError::NonFinite("initial state"));
    }
    Ok(())
}

fn full_state(grid: &Arc<RadialGrid>, inner: &[Complex64]) -> RadialFunction {
    let mut vals = inner.to_vec();
    vals.push(Complex64::new(0.0, 0.0));
    RadialFunction::new(grid.clone(), vals).expect("state matches its grid")
}

/// Largest allowed relative norm growth per step without an absorber.
pub const NORM_GROWTH_TOL: f64 = 1e-6;

/// Crank–Nicolson for `i v_t = (A - iW) v` with Dirichlet at `r_max`.
pub fn evolve_schrodinger(
    problem: &ModeProblem,
    v0: &RadialFunction,
    params: &EvolveParams,
    absorber: Option<Absorber>,
) -> Result<Trajectory> {
    check_state(problem, v0)?;
    let op = ModeOperator::new(problem)?;
    let m = op.len();
    let tau = 0.5 * params.dt;
    let i_unit = Complex64::new(0.0, 1.0);
    let sponge = absorber.map(|a| a.profile(&problem.grid)).unwrap_or_else(|| vec![0.0; m + 1]);
    let mut lhs = Tridiagonal::zeros(m);
    for i in 0..m {
        lhs.sub[i] = i_unit * tau * op.sub[i];
        lhs.sup[i] = i_unit * tau * op.sup[i];
        lhs.diag[i] = Complex64::new(1.0 + tau * sponge[i], tau * op.diag[i]);
    }
    let factors = ThomasFactors::new(&lhs)?;

    let mut flags = Vec::new();
    if absorber.is_none() && reflection_risk(problem, v0, params) {
        flags.push("reflection_risk");
    }
    let mut v: Vec<Complex64> = v0.values()[..m].to_vec();
    let mut tmp = vec![Complex64::new(0.0, 0.0); m];
    let mut traj = Trajectory {
        scheme: Scheme::CrankNicolson,
        mode: problem.mode,
        grid: problem.grid.clone(),
        dt: params.dt,
        times: vec![0.0],
        states: vec![full_state(&problem.grid, &v)],
        velocities: None,
        conserved_log: vec![weighted_sq(&op.weights, &v).sqrt()],
        weights: op.weights.clone(),
        last_levels: None,
        flags,
    };
    for step in 1..=params.steps {
        op.apply(&v, &mut tmp);
        for i in 0..m {
            tmp[i] = v[i] * (1.0 - tau * sponge[i]) - i_unit * tau * tmp[i];
        }
        factors.solve_in_place(&mut tmp);
        std::mem::swap(&mut v, &mut tmp);
        let norm = weighted_sq(&op.weights, &v).sqrt();
        let prev = *traj.conserved_log.last().expect("log starts with the initial norm");
        if !norm.is_finite() {
            return Err(LabError::NonFinite("Schrodinger step"));
        }
        if absorber.is_none() && norm > prev * (1.0 + NORM_GROWTH_TOL) + f64::MIN_POSITIVE {
            return Err(LabError::Numerical(format!(
                "norm grew from {prev:.6e} to {norm:.6e} at step {step}: unstable evolution"
            )));
        }
        traj.conserved_log.push(norm);
        if step % params.store_every == 0 || step == params.steps {
            traj.times.push(step as f64 * params.dt);
            traj.states.push(full_state(&problem.grid, &v));
        }
    }
    Ok(traj)
}

/// Heuristic: the data's spectral radius, with a 3x margin, reaches `r_max` within the run.
fn reflection_risk(problem: &ModeProblem, v0: &RadialFunction, params: &EvolveParams) -> bool {
    let norm = v0.l2_norm();
    if norm == 0.0 {
        return false;
    }
    let dv = v0.derivative();
    let dens: Vec<f64> = dv.iter().map(|d| d.norm_sqr()).collect();
    let k = (problem.grid.integrate(&dens)).sqrt() / norm;
    let speed = 2.0 * (3.0 * k).max(1.0);
    speed * params.steps as f64 * params.dt.abs() > problem.grid.r_max()
}

/// CFL ceiling `dt ≤ 0.9 h`.
pub const CFL_FACTOR: f64 = 0.9;

/// Time-periodic source `e^{iμt} g` added to the wave equation.
#[derive(Debug, Clone)]
pub struct WaveForcing {
    pub mu: f64,
    /// Mode-reduced source.
    pub g: Vec<Complex64>,
}

/// Leapfrog for `v_tt = -A v + F(t)` from `(v(0), v_t(0))`.
pub fn evolve_wave(
    problem: &ModeProblem,
    u0: &RadialFunction,
    u1: &RadialFunction,
    params: &EvolveParams,
    forcing: Option<&WaveForcing>,
) -> Result<Trajectory> {
    check_state(problem, u0)?;
    check_state(problem, u1)?;
    let op = wave_operator(problem, params.dt)?;
    let m = op.len();
    let dt = params.dt;
    let mut a0 = vec![Complex64::new(0.0, 0.0); m];
    op.apply(&u0.values()[..m], &mut a0);
    let f0 = forcing_at(forcing, 0.0, m);
    let first: Vec<Complex64> = (0..m)
        .map(|i| u0.values()[i] + u1.values()[i] * dt + (f0[i] - a0[i]) * (0.5 * dt * dt))
        .collect();
    leapfrog(problem, op, u0.values()[..m].to_vec(), first, Some(u1.values()[..m].to_vec()), params, forcing)
}

/// Leapfrog restarted from two consecutive levels `(v^0, v^1)`; exactly reversible.
pub fn evolve_wave_levels(
    problem: &ModeProblem,
    level0: &[Complex64],
    level1: &[Complex64],
    params: &EvolveParams,
) -> Result<Trajectory> {
    let n = problem.grid.len();
    if level0.len() < n - 1 || level1.len() < n - 1 {
        return Err(LabError::invalid("time levels do not match the grid"));
    }
    let op = wave_operator(problem, params.dt)?;
    let m = op.len();
    leapfrog(problem, op, level0[..m].to_vec(), level1[..m].to_vec(), None, params, None)
}

fn wave_operator(problem: &ModeProblem, dt: f64) -> Result<ModeOperator> {
    let op = ModeOperator::new(problem)?;
    let h = problem.grid.h();
    if dt.abs() > CFL_FACTOR * h {
        return Err(LabError::invalid(format!("CFL violation: |dt| = {} exceeds 0.9 h = {}", dt.abs(), CFL_FACTOR * h)));
    }
    let bound = op.spectral_bound();
    if dt * dt * bound >= 4.0 {
        return Err(LabError::invalid(format!(
            "leapfrog unstable: dt² times the spectral bound {bound:.3e} reaches 4"
        )));
    }
    Ok(op)
}

fn forcing_at(forcing: Option<&WaveForcing>, t: f64, m: usize) -> Vec<Complex64> {
    match forcing {
        Some(f) => {
            let phase = Complex64::from_polar(1.0, f.mu * t);
            f.g[..m].iter().map(|g| g * phase).collect()
        }
        None => vec![Complex64::new(0.0, 0.0); m],
    }
}

/// `‖(b - a)/dt‖²_w + Re⟨A b, a⟩_w`, conserved exactly by unforced leapfrog.
fn staggered_energy(op: &ModeOperator, a: &[Complex64], b: &[Complex64], dt: f64, scratch: &mut [Complex64]) -> f64 {
    op.apply(b, scratch);
    let mut e = 0.0;
    for i in 0..a.len() {
        let d = (b[i] - a[i]) / dt;
        e += op.weights[i] * (d.norm_sqr() + (scratch[i] * a[i].conj()).re);
    }
    e
}

fn leapfrog(
    problem: &ModeProblem,
    op: ModeOperator,
    level0: Vec<Complex64>,
    level1: Vec<Complex64>,
    velocity0: Option<Vec<Complex64>>,
    params: &EvolveParams,
    forcing: Option<&WaveForcing>,
) -> Result<Trajectory> {
    let m = op.len();
    let dt = params.dt;
    let grid = problem.grid.clone();
    let mut scratch = vec![Complex64::new(0.0, 0.0); m];
    let v0 = velocity0.unwrap_or_else(|| (0..m).map(|i| (level1[i] - level0[i]) / dt).collect());
    let mut traj = Trajectory {
        scheme: Scheme::Leapfrog,
        mode: problem.mode,
        grid: grid.clone(),
        dt,
        times: vec![0.0],
        states: vec![full_state(&grid, &level0)],
        velocities: Some(vec![full_state(&grid, &v0)]),
        conserved_log: vec![staggered_energy(&op, &level0, &level1, dt, &mut scratch)],
        weights: op.weights.clone(),
        last_levels: None,
        flags: Vec::new(),
    };
    let mut prev = level0;
    let mut cur = level1;
    let mut next = vec![Complex64::new(0.0, 0.0); m];
    // Level n is `cur` at time n·dt; `prev` is level n-1.
    for n in 1..=params.steps {
        op.apply(&cur, &mut scratch);
        let f = forcing_at(forcing, n as f64 * dt, m);
        for i in 0..m {
            next[i] = cur[i] * 2.0 - prev[i] + (f[i] - scratch[i]) * (dt * dt);
        }
        if n % params.store_every == 0 || n == params.steps {
            traj.times.push(n as f64 * dt);
            traj.states.push(full_state(&grid, &cur));
            let vel: Vec<Complex64> = (0..m).map(|i| (next[i] - prev[i]) / (2.0 * dt)).collect();
            traj.velocities.as_mut().expect("wave stores velocities").push(full_state(&grid, &vel));
        }
        let e = staggered_energy(&op, &cur, &next, dt, &mut scratch);
        if !e.is_finite() {
            return Err(LabError::NonFinite("leapfrog step"));
        }
        traj.conserved_log.push(e);
        if n == params.steps {
            traj.last_levels = Some((prev.clone(), cur.clone()));
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    if traj.last_levels.is_none() {
        traj.last_levels = Some((prev, cur));
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservables {
    pub times: Vec<f64>,
    /// `∫_{r ≤ r_K} |u|² r^{n-1} dr`.
    pub local_mass: Vec<f64>,
    /// `∫_{r ≤ r_K} (|u_t|² + |u_r|² + Λ/r²|u|²) r^{n-1} dr`; the `u_t` term only for wave runs.
    pub local_energy: Vec<f64>,
}

fn gradient_density(mode: &ModeParams, v: &RadialFunction) -> Vec<f64> {
    let r = v.grid().r();
    let dv = v.derivative();
    let k = mode.half_power();
    let ang = mode.angular();
    (0..r.len())
        .map(|i| (dv[i] - v.values()[i] * (k / r[i])).norm_sqr() + ang / (r[i] * r[i]) * v.values()[i].norm_sqr())
        .collect()
}

pub fn local_observables(traj: &Trajectory, r_k: f64) -> Result<LocalObservables> {
    if !(r_k < 0.5 * traj.grid.r_max()) {
        return Err(LabError::invalid(format!("r_K = {r_k} must be below r_max/2 = {}", 0.5 * traj.grid.r_max())));
    }
    let idx = traj.grid.index_range(f64::NEG_INFINITY, r_k);
    let mut out = LocalObservables { times: traj.times.clone(), local_mass: Vec::new(), local_energy: Vec::new() };
    for (j, v) in traj.states.iter().enumerate() {
        let mass: Vec<f64> = v.values().iter().map(|x| x.norm_sqr()).collect();
        let mut energy = gradient_density(&traj.mode, v);
        if let Some(vel) = &traj.velocities {
            for (e, x) in energy.iter_mut().zip(vel[j].values()) {
                *e += x.norm_sqr();
            }
        }
        out.local_mass.push(traj.grid.integrate_range(&mass, idx.clone()));
        out.local_energy.push(traj.grid.integrate_range(&energy, idx.clone()));
    }
    Ok(out)
}

/// Nodes kept in the dense eigendecomposition behind the data norm.
pub const DATA_NORM_MAX_NODES: usize = 2048;

/// `D = ⟨(1 + A)^{1/2} v₀, v₀⟩_w` on the smallest leading block holding the data (at most 2048 nodes).
///
/// Returns `(D, truncated)` where `truncated` reports data left outside the block.
pub fn half_derivative_data_norm(problem: &ModeProblem, v0: &RadialFunction) -> Result<(f64, bool)> {
    check_state(problem, v0)?;
    let op = ModeOperator::new(problem)?;
    let vals = v0.values();
    let peak = v0.max_abs();
    if peak == 0.0 {
        return Ok((0.0, false));
    }
    let support_end = vals.iter().rposition(|x| x.norm() > 1e-14 * peak).unwrap_or(0) + 1;
    let size = (support_end + 64).min(op.len()).min(DATA_NORM_MAX_NODES);
    let truncated = size < support_end;
    let w = &op.weights[..size];
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let diag: Vec<f64> = op.diag[..size].to_vec();
    let off_sq: Vec<f64> = (0..size - 1).map(|i| op.sup[i] * op.sub[i + 1]).collect();
    let sym = SymTridiagonal { diag, off_sq };
    let (evals, evecs) = sym.eigen();
    let y: Vec<Complex64> = (0..size).map(|i| vals[i] * sw[i]).collect();
    let mut d = 0.0;
    for k in 0..size {
        let mut c = Complex64::new(0.0, 0.0);
        for i in 0..size {
            c += y[i] * evecs[(i, k)];
        }
        d += (1.0 + evals[k]).max(0.0).sqrt() * c.norm_sqr();
    }
    Ok((d, truncated))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSeries {
    pub times: Vec<f64>,
    /// Running `I(t) = ∫₀ᵗ ‖u(s)‖²_{H^{1,-1/2-σ}} ds`.
    pub integral: Vec<f64>,
    pub data_norm: f64,
}

impl SmoothingSeries {
    /// `I` at the last stored time not after `t`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t + 1e-12);
        if k == 0 {
            0.0
        } else {
            self.integral[k - 1]
        }
    }

    pub fn plateau_ratio(&self, t: f64) -> f64 {
        self.at(2.0 * t) / self.at(t)
    }
}

pub fn local_smoothing_integral(traj: &Trajectory, sigma: f64, up_to: f64, data_norm: f64) -> Result<SmoothingSeries> {
    if !(sigma > 0.0) {
        return Err(LabError::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let spec = WeightSpec::h1(-0.5 - sigma);
    let mut times = Vec::new();
    let mut integral = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    let mut acc = 0.0;
    for (t, v) in traj.times.iter().zip(&traj.states) {
        if *t > up_to + 1e-12 {
            break;
        }
        let q = weighted_norm(v, spec, &traj.mode)?.powi(2);
        if let Some((t0, q0)) = prev {
            acc += 0.5 * (t - t0) * (q + q0);
        }
        prev = Some((*t, q));
        times.push(*t);
        integral.push(acc);
    }
    Ok(SmoothingSeries { times, integral, data_norm })
}

/// `sup_{r_floor ≤ r ≤ r_hi} |u|`, with `u(0)` extrapolated for the `L = 1` mode.
pub fn sup_u(mode: &ModeParams, v: &RadialFunction, r_hi: f64) -> f64 {
    let grid = v.grid();
    let r = grid.r();
    let k = mode.half_power();
    let floor = 5.0 * grid.h();
    let mut sup = r
        .iter()
        .zip(v.values())
        .filter(|(&x, _)| x >= floor && x <= r_hi)
        .map(|(&x, y)| y.norm() * x.powf(-k))
        .fold(0.0, f64::max);
    if mode.l == 0 && mode.n == 3 {
        let u_h = v.values()[0] / r[0];
        let u_2h = v.values()[1] / r[1];
        sup = sup.max(((u_h * 4.0 - u_2h) / 3.0).norm());
    }
    sup
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub t_lo: f64,
    pub t_hi: f64,
    pub fitted_exponent: f64,
    /// `R²` of the log-log fit.
    pub fit_residual: f64,
    pub samples: usize,
    pub flag: Option<&'static str>,
}

/// Level below which a sup-norm counts as vacated.
pub const VACATED_LEVEL: f64 = 1e-8;
pub const MIN_DECAY_SAMPLES: usize = 8;

/// Least-squares slope of `log sup|u|` against `log t` on `[t_lo, t_hi]`, sup over `r ≤ r_hi`.
pub fn pointwise_decay_fit(traj: &Trajectory, t_lo: f64, t_hi: f64, r_hi: f64) -> Result<DecayFit> {
    if !(t_lo >= 1.0) || !(t_hi > t_lo) {
        return Err(LabError::invalid(format!("decay window [{t_lo}, {t_hi}] must satisfy 1 ≤ t_lo < t_hi")));
    }
    let mut ts = Vec::new();
    let mut sups = Vec::new();
    for (t, v) in traj.times.iter().zip(&traj.states) {
        if *t >= t_lo && *t <= t_hi {
            ts.push(*t);
            sups.push(sup_u(&traj.mode, v, r_hi));
        }
    }
    if ts.len() < MIN_DECAY_SAMPLES {
        return Err(LabError::invalid(format!(
            "decay window holds {} stored times, need {MIN_DECAY_SAMPLES}",
            ts.len()
        )));
    }
    let peak = traj.states.first().map(|v| sup_u(&traj.mode, v, r_hi)).unwrap_or(0.0);
    if sups.iter().any(|&s| s <= VACATED_LEVEL * peak.max(f64::MIN_POSITIVE)) {
        return Ok(DecayFit {
            t_lo,
            t_hi,
            fitted_exponent: f64::NEG_INFINITY,
            fit_residual: f64::NAN,
            samples: ts.len(),
            flag: Some("vacated"),
        });
    }
    let fit = loglog_fit(&ts, &sups)?;
    Ok(DecayFit { t_lo, t_hi, fitted_exponent: fit.slope, fit_residual: fit.r2, samples: ts.len(), flag: None })
}

/// Vector-field energy with cutoff `χ = η((r - r0)/r0)`: zero for `r ≤ r0`, one for `r ≥ 2 r0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MorawetzSpec {
    pub r0: f64,
    pub chi: Vec<f64>,
}

impl MorawetzSpec {
    pub fn new(grid: &RadialGrid, r0: f64) -> Result<Self> {
        if !(r0 > 0.0) || 4.0 * r0 >= grid.r_max() {
            return Err(LabError::invalid(format!("r0 = {r0} must be positive with 4 r0 < r_max")));
        }
        Ok(MorawetzSpec { r0, chi: grid.r().iter().map(|&r| smooth_step((r - r0) / r0)).collect() })
    }

    /// `b = (n-1)t + 2tχrθ`.
    pub fn b(&self, n: u32, t: f64, r: f64, chi: f64, theta: f64) -> f64 {
        (n as f64 - 1.0) * t + 2.0 * t * chi * r * theta
    }
}

/// `E_K` at stored index `i`: `t²`-weighted local energy on `r ≤ 4r0` plus the null-frame exterior energy.
pub fn morawetz_energy(traj: &Trajectory, i: usize, spec: &MorawetzSpec) -> Result<f64> {
    let vel = traj.velocities.as_ref().ok_or_else(|| LabError::invalid("Morawetz energy needs a wave trajectory"))?;
    if i >= traj.len() {
        return Err(LabError::invalid(format!("stored index {i} out of range")));
    }
    let t = traj.times[i].abs();
    let grid = &traj.grid;
    let r = grid.r();
    let v = traj.states[i].values();
    let vt = vel[i].values();
    let dv = traj.states[i].derivative();
    let k = traj.mode.half_power();
    let ang = traj.mode.angular();
    let n = r.len();
    let split = grid.nearest_index(4.0 * spec.r0);
    let mut inner = vec![0.0; n];
    let mut outer = vec![0.0; n];
    for j in 0..n {
        let x = r[j];
        let p = dv[j] - v[j] * (k / x);
        let q = v[j].norm_sqr();
        inner[j] = t * t * (vt[j].norm_sqr() + p.norm_sqr() + ang / (x * x) * q + q);
        outer[j] = (t + x).powi(2) * (vt[j] + p).norm_sqr()
            + (t - x).powi(2) * (vt[j] - p).norm_sqr()
            + (t * t + x * x) * ang / (x * x) * q
            + (1.0 + t * t / (x * x)) * q;
    }
    Ok(grid.integrate_range(&inner, 0..split + 1) + grid.integrate_range(&outer, split..n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    pub l2_norm: f64,
    pub local_mass: f64,
    pub local_energy: f64,
    pub sup_u: f64,
    /// NaN for Schrödinger runs.
    pub e_k: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "t,l2_norm,local_mass,local_energy,sup_u,E_K";

    pub fn csv_row(&self) -> String {
        [self.t, self.l2_norm, self.local_mass, self.local_energy, self.sup_u, self.e_k]
            .iter()
            .map(|x| fmt_num(*x))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn trajectory_summary(traj: &Trajectory, r_k: f64, morawetz: Option<&MorawetzSpec>) -> Result<Vec<SummaryRow>> {
    let obs = local_observables(traj, r_k)?;
    let mut rows = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let e_k = match (morawetz, &traj.velocities) {
            (Some(spec), Some(_)) => morawetz_energy(traj, i, spec)?,
            _ => f64::NAN,
        };
        rows.push(SummaryRow {
            t: traj.times[i],
            l2_norm: traj.l2_norm(i),
            local_mass: obs.local_mass[i],
            local_energy: obs.local_energy[i],
            sup_u: sup_u(&traj.mode, &traj.states[i], f64::INFINITY),
            e_k,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitingAmplitude {
    pub times: Vec<f64>,
    /// `‖v(t)e^{-iμt} - w_rad‖_{L²(K)}` against the solution radiating outward under `e^{iμt}` forcing.
    pub discrepancy_radiating: Vec<f64>,
    /// Same against the opposite radiation condition.
    pub discrepancy_opposite: Vec<f64>,
    pub radiating_norm: f64,
    pub opposite_norm: f64,
    /// Radiation condition (resolvent naming) of the radiating solution: `Incoming`, since
    /// `e^{iμt}e^{-iμr}` moves outward.
    pub radiating_bc: BcKind,
    pub flag: Option<&'static str>,
}

impl LimitingAmplitude {
    pub fn final_relative(&self) -> (f64, f64) {
        let a = self.discrepancy_radiating.last().copied().unwrap_or(f64::NAN);
        let b = self.discrepancy_opposite.last().copied().unwrap_or(f64::NAN);
        (a / self.radiating_norm, b / self.opposite_norm)
    }
}

/// Forced wave `u_tt - Δu = e^{iμt} f` from rest, compared on `K = [0, k_radius]` with both
/// Helmholtz solutions at `λ = μ²`.
pub fn limiting_amplitude_experiment(
    problem: &ModeProblem,
    f: &RadialFunction,
    mu: f64,
    params: &EvolveParams,
    k_radius: f64,
) -> Result<LimitingAmplitude> {
    if !(mu > 0.0) {
        return Err(LabError::invalid(format!("forcing frequency must be positive, got {mu}")));
    }
    check_state(problem, f)?;
    let g = mode_source(f, &problem.mode);
    let base = ModeProblem { lambda: mu * mu, epsilon: 0.0, ..problem.clone() };
    let mut flag = None;
    let solve = |branch: Branch| -> Result<Option<RadialFunction>> {
        let p = base.with_branch(branch);
        match solve_resolvent_mode(&p, &g, branch.natural_bc()) {
            Ok(s) => Ok(Some(s.v)),
            Err(LabError::Singular { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let radiating = solve(Branch::Minus)?;
    let opposite = solve(Branch::Plus)?;
    let (radiating, opposite) = match (radiating, opposite) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            flag = Some("near_resonance");
            let z = RadialFunction::zeros(problem.grid.clone());
            (z.clone(), z)
        }
    };
    let zero = RadialFunction::zeros(problem.grid.clone());
    let forcing = WaveForcing { mu, g: g.values().to_vec() };
    let traj = evolve_wave(&base, &zero, &zero, params, Some(&forcing))?;
    let idx = problem.grid.index_range(f64::NEG_INFINITY, k_radius);
    let dist = |a: &[Complex64], b: &[Complex64], phase: Complex64| -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x * phase - y).norm_sqr()).collect();
        problem.grid.integrate_range(&d, idx.clone()).sqrt()
    };
    let norm_of = |a: &RadialFunction| dist(a.values(), zero.values(), Complex64::new(1.0, 0.0));
    let mut out = LimitingAmplitude {
        times: traj.times.clone(),
        discrepancy_radiating: Vec::with_capacity(traj.len()),
        discrepancy_opposite: Vec::with_capacity(traj.len()),
        radiating_norm: norm_of(&radiating),
        opposite_norm: norm_of(&opposite),
        radiating_bc: BcKind::Incoming,
        flag,
    };
    for (t, v) in traj.times.iter().zip(&traj.states) {
        let phase = Complex64::from_polar(1.0, -mu * t);
        out.discrepancy_radiating.push(dist(v.values(), radiating.values(), phase));
        out.discrepancy_opposite.push(dist(v.values(), opposite.values(), phase));
    }
    Ok(out)
}
