//! Per-mode resolvent solves, epsilon ladders, estimate gauges and eigenvalue counts.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{SolveInfo, SymTridiagonal, Tridiagonal};
use crate::radial::{
    bracket, centered_derivative, fmt_num, weighted_norm, weighted_norm_on, ModeParams, Profiles,
    RadialFunction, RadialGrid, WeightSpec,
};

/// Low-energy floor used by the boundary-dominance rule.
pub const LAMBDA_FLOOR: f64 = 1e-3;
/// Tolerance on the verified discrete residual of a solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }

    /// The radiation condition that decays on this branch.
    pub fn natural_bc(self) -> BcKind {
        match self {
            Branch::Plus => BcKind::Outgoing,
            Branch::Minus => BcKind::Incoming,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Outgoing,
    Incoming,
    Dirichlet,
}

impl fmt::Display for BcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BcKind::Outgoing => "outgoing",
            BcKind::Incoming => "incoming",
            BcKind::Dirichlet => "dirichlet",
        };
        f.write_str(s)
    }
}

/// One angular mode of `(H - (λ ± iε)) u = f` on a radial grid.
#[derive(Debug, Clone)]
pub struct ModeProblem {
    pub mode: ModeParams,
    pub profiles: Arc<Profiles>,
    pub lambda: f64,
    pub epsilon: f64,
    pub branch: Branch,
    pub grid: Arc<RadialGrid>,
}

impl ModeProblem {
    pub fn new(
        mode: ModeParams,
        profiles: Arc<Profiles>,
        lambda: f64,
        epsilon: f64,
        branch: Branch,
        grid: Arc<RadialGrid>,
    ) -> Result<Self> {
        if profiles.len() != grid.len() {
            return Err(LabError::invalid(format!(
                "profiles have {} samples but grid has {}",
                profiles.len(),
                grid.len()
            )));
        }
        if !lambda.is_finite() || !epsilon.is_finite() {
            return Err(LabError::invalid("energy and regularization must be finite"));
        }
        if epsilon < 0.0 {
            return Err(LabError::invalid(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        Ok(ModeProblem { mode, profiles, lambda, epsilon, branch, grid })
    }

    /// Free problem (`V = θ = 0`) on `grid`.
    pub fn free(
        mode: ModeParams,
        lambda: f64,
        epsilon: f64,
        branch: Branch,
        grid: Arc<RadialGrid>,
    ) -> Result<Self> {
        let profiles = Arc::new(Profiles::free(&grid));
        Self::new(mode, profiles, lambda, epsilon, branch, grid)
    }

    /// Principal square root of `λ ± iε`.
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.lambda, self.branch.sign() * self.epsilon).sqrt()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.mode, self.profiles.clone(), self.lambda, epsilon, self.branch, self.grid.clone())
    }

    pub fn with_branch(&self, branch: Branch) -> Self {
        ModeProblem { branch, ..self.clone() }
    }

    /// Smallest outer radius at which the leading-order radiation condition is trusted.
    pub fn required_r_max(&self) -> f64 {
        let lam = self.lambda.max(LAMBDA_FLOOR);
        let a = 50.0 / lam.sqrt();
        let b = if self.lambda > 0.0 { 10.0 * self.mode.big_l() / self.lambda.sqrt() } else { f64::INFINITY };
        a.max(b)
    }

    pub fn boundary_dominated(&self) -> bool {
        self.grid.r_max() < self.required_r_max()
    }

    /// Regularity Robin coefficient at `r_min`: `v_r = (L / r_min) v`.
    pub fn inner_robin(&self) -> f64 {
        self.mode.big_l() / self.grid.r_min()
    }

    /// Robin coefficient `κ` in `v_r = κ v` at `r_max`, if the condition is of Robin type.
    pub fn outer_robin(&self, bc: BcKind) -> Option<Complex64> {
        let iz = Complex64::new(0.0, 1.0) * self.z();
        match bc {
            BcKind::Outgoing => Some(iz),
            BcKind::Incoming => Some(-iz),
            BcKind::Dirichlet => None,
        }
    }
}

/// `g = r^{(n-1)/2} f`.
pub fn mode_source(f: &RadialFunction, mode: &ModeParams) -> RadialFunction {
    let k = mode.half_power();
    f.map(|r, x| x * r.powf(k))
}

/// `u = r^{-(n-1)/2} v`.
pub fn mode_to_u(v: &RadialFunction, mode: &ModeParams) -> RadialFunction {
    let k = mode.half_power();
    v.map(|r, x| x * r.powf(-k))
}

/// Interior coefficients `(a, b, c)` of the stencil `a v[i-1] + b v[i] + c v[i+1]` at node `i`.
fn stencil(problem: &ModeProblem, i: usize, shift: Complex64) -> (f64, Complex64, f64) {
    let grid = &problem.grid;
    let h = grid.h();
    let r = grid.r()[i];
    let th = problem.profiles.theta[i];
    let v = problem.profiles.potential[i];
    let n = problem.mode.n as f64;
    let a = -1.0 / (h * h) + th / (2.0 * h);
    let c = -1.0 / (h * h) - th / (2.0 * h);
    let q = problem.mode.centrifugal() / (r * r) + v + (n - 1.0) * th / r;
    (a, Complex64::new(2.0 / (h * h) + q, 0.0) - shift, c)
}

fn assemble_with_shift(problem: &ModeProblem, shift: Complex64, bc: BcKind) -> Tridiagonal {
    let n = problem.grid.len();
    let h = problem.grid.h();
    let mut t = Tridiagonal::zeros(n);
    for i in 0..n {
        let (a, b, c) = stencil(problem, i, shift);
        t.sub[i] = a.into();
        t.diag[i] = b;
        t.sup[i] = c.into();
    }
    let k0 = problem.inner_robin();
    let (a0, _, c0) = stencil(problem, 0, shift);
    t.diag[0] -= 2.0 * h * k0 * a0;
    t.sup[0] = (a0 + c0).into();
    t.sub[0] = 0.0.into();
    let last = n - 1;
    match problem.outer_robin(bc) {
        Some(kappa) => {
            let (al, _, cl) = stencil(problem, last, shift);
            t.diag[last] += kappa * (2.0 * h * cl);
            t.sub[last] = (al + cl).into();
        }
        None => {
            t.sub[last] = 0.0.into();
            t.diag[last] = 1.0.into();
        }
    }
    t.sup[last] = 0.0.into();
    t
}

/// Discretization of `-v'' - θ v' + [L(L-1)/r² + V + (n-1)θ/r - z²] v` with boundary rows.
///
/// Dirichlet replaces the last row by the identity (the solver pins `v(r_max) = 0`).
pub fn assemble_mode_operator(problem: &ModeProblem, bc: BcKind) -> Result<Tridiagonal> {
    if problem.grid.r_min() <= 0.0 {
        return Err(LabError::invalid("grid must start at a positive radius"));
    }
    if problem.profiles.len() != problem.grid.len() {
        return Err(LabError::invalid("profile length does not match the grid"));
    }
    let z = problem.z();
    Ok(assemble_with_shift(problem, z * z, bc))
}

/// Real rows `(sub, diag, sup)` of the Dirichlet operator without the energy shift, on nodes `0..n-1`.
pub fn dirichlet_rows(problem: &ModeProblem) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = assemble_with_shift(problem, Complex64::new(0.0, 0.0), BcKind::Dirichlet);
    let m = t.len() - 1;
    let sub = t.sub[..m].iter().map(|x| x.re).collect();
    let diag = t.diag[..m].iter().map(|x| x.re).collect();
    let mut sup: Vec<f64> = t.sup[..m].iter().map(|x| x.re).collect();
    sup[m - 1] = 0.0;
    (sub, diag, sup)
}

pub fn dirichlet_operator(problem: &ModeProblem) -> Result<SymTridiagonal> {
    let (sub, diag, sup) = dirichlet_rows(problem);
    SymTridiagonal::from_real_rows(&sub, &diag, &sup)
}

/// Number of Dirichlet eigenvalues of the discrete mode operator in `[a, b)`.
pub fn sturm_eigencount(problem: &ModeProblem, a: f64, b: f64) -> Result<usize> {
    if problem.epsilon != 0.0 {
        return Err(LabError::invalid("eigenvalue counts need epsilon = 0"));
    }
    if !(a < b) {
        return Err(LabError::invalid(format!("empty interval [{a}, {b}]")));
    }
    Ok(dirichlet_operator(problem)?.count_in(a, b))
}

#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub v: RadialFunction,
    pub problem: ModeProblem,
    pub source: RadialFunction,
    pub discrete_residual: f64,
    pub bc: BcKind,
    pub info: SolveInfo,
}

impl ModeSolution {
    /// Wrap a prescribed profile, recording its discrete residual against the assembled operator.
    pub fn from_profile(problem: &ModeProblem, v: RadialFunction, g: RadialFunction, bc: BcKind) -> Result<Self> {
        if !v.same_grid(&g) || !(Arc::ptr_eq(v.grid(), &problem.grid) || **v.grid() == *problem.grid) {
            return Err(LabError::invalid("profile, source and problem live on different grids"));
        }
        let op = assemble_mode_operator(problem, bc)?;
        let mut rhs = g.values().to_vec();
        if bc == BcKind::Dirichlet {
            let last = rhs.len() - 1;
            rhs[last] = Complex64::new(0.0, 0.0);
        }
        let scale = 1.0 + rhs.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let residual = op
            .apply(v.values())
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
            / scale;
        Ok(ModeSolution {
            v,
            problem: problem.clone(),
            source: g,
            discrete_residual: residual,
            bc,
            info: SolveInfo { pivoted: false, min_pivot_ratio: f64::NAN },
        })
    }

    pub fn z(&self) -> Complex64 {
        self.problem.z()
    }

    pub fn u(&self) -> RadialFunction {
        mode_to_u(&self.v, &self.problem.mode)
    }

    /// `v_r` with endpoint values taken from the boundary conditions.
    pub fn v_r(&self) -> Vec<Complex64> {
        let vals = self.v.values();
        let mut d = centered_derivative(vals, self.v.grid().h());
        d[0] = vals[0] * self.problem.inner_robin();
        if let Some(kappa) = self.problem.outer_robin(self.bc) {
            let last = vals.len() - 1;
            d[last] = vals[last] * kappa;
        }
        d
    }

    /// `Im(v̄ v_r)` at `(r_min, r_max)`.
    pub fn boundary_fluxes(&self) -> (f64, f64) {
        let vals = self.v.values();
        let d = self.v_r();
        let last = vals.len() - 1;
        ((vals[0].conj() * d[0]).im, (vals[last].conj() * d[last]).im)
    }
}

/// Quadrature weights `w` with `w_i A_{i,i+1} = w_{i+1} A_{i+1,i}`, `w_0 = h/2`.
///
/// They reduce to the trapezoid weights when `θ = 0` and make the weighted operator symmetric.
pub fn symmetrizing_weights(problem: &ModeProblem) -> Result<Vec<f64>> {
    let t = assemble_with_shift(problem, Complex64::new(0.0, 0.0), BcKind::Outgoing);
    let n = t.len();
    let mut w = vec![0.5 * problem.grid.h(); n];
    for i in 0..n - 1 {
        let ratio = t.sup[i].re / t.sub[i + 1].re;
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(LabError::invalid(format!(
                "curvature term too large for the grid spacing at node {i}"
            )));
        }
        w[i + 1] = w[i] * ratio;
    }
    Ok(w)
}

/// Solve the mode problem for the mode-reduced source `g = r^{(n-1)/2} f`.
pub fn solve_resolvent_mode(problem: &ModeProblem, g: &RadialFunction, bc: BcKind) -> Result<ModeSolution> {
    if !(Arc::ptr_eq(g.grid(), &problem.grid) || **g.grid() == *problem.grid) {
        return Err(LabError::invalid("source and problem live on different grids"));
    }
    if problem.epsilon == 0.0 && bc == BcKind::Dirichlet {
        return Err(LabError::invalid(
            "epsilon = 0 needs an explicit outgoing or incoming boundary condition",
        ));
    }
    if !g.is_finite() {
        return Err(LabError::NonFinite("resolvent source"));
    }
    let op = assemble_mode_operator(problem, bc)?;
    let mut rhs = g.values().to_vec();
    if bc == BcKind::Dirichlet {
        let last = rhs.len() - 1;
        rhs[last] = Complex64::new(0.0, 0.0);
    }
    let (mut x, info) = op.solve(&rhs)?;
    if problem.epsilon == 0.0 && info.min_pivot_ratio < 1e-12 {
        return Err(LabError::Singular {
            diagnostic: format!(
                "relative pivot {:.3e} at lambda = {}: energy sits on a discrete eigenvalue",
                info.min_pivot_ratio, problem.lambda
            ),
        });
    }
    let scale = 1.0 + rhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let residual_of = |x: &[Complex64]| -> (Vec<Complex64>, f64) {
        let ax = op.apply(x);
        let res: Vec<Complex64> = ax.iter().zip(&rhs).map(|(a, b)| b - a).collect();
        let m = res.iter().map(|v| v.norm()).fold(0.0, f64::max) / scale;
        (res, m)
    };
    let (mut res, mut resid) = residual_of(&x);
    for _ in 0..2 {
        if resid <= RESIDUAL_TOL * 1e-2 || !resid.is_finite() {
            break;
        }
        let (dx, _) = op.solve(&res)?;
        let cand: Vec<Complex64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let (cres, cr) = residual_of(&cand);
        if cr < resid {
            x = cand;
            res = cres;
            resid = cr;
        } else {
            break;
        }
    }
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(LabError::NonFinite("resolvent solve"));
    }
    if resid > RESIDUAL_TOL {
        return Err(LabError::Numerical(format!(
            "discrete residual {resid:.3e} exceeds {RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(ModeSolution {
        v: RadialFunction::new(problem.grid.clone(), x)?,
        problem: problem.clone(),
        source: g.clone(),
        discrete_residual: resid,
        bc,
        info,
    })
}

#[derive(Debug, Clone)]
pub struct EpsilonLadder {
    pub epsilons: Vec<f64>,
    pub solutions: Vec<ModeSolution>,
    /// `‖v_{ε_i} - v_{ε_{i+1}}‖_{H^{0,-1/2-σ}}` per consecutive pair.
    pub cauchy: Vec<f64>,
    /// `None` with fewer than two differences.
    pub converged: Option<bool>,
}

impl EpsilonLadder {
    pub fn last(&self) -> &ModeSolution {
        self.solutions.last().expect("ladder has at least one rung")
    }
}

/// Ratio each Cauchy difference must shrink by for the ladder to count as converged.
pub const LADDER_FACTOR: f64 = 1.5;

pub fn epsilon_ladder(template: &ModeProblem, g: &RadialFunction, eps_list: &[f64], sigma: f64) -> Result<EpsilonLadder> {
    if eps_list.is_empty() {
        return Err(LabError::invalid("epsilon ladder is empty"));
    }
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(LabError::invalid("epsilon ladder entries must be positive"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(LabError::invalid("epsilon ladder must be strictly decreasing"));
    }
    let bc = template.branch.natural_bc();
    let mut solutions = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        solutions.push(solve_resolvent_mode(&template.with_epsilon(eps)?, g, bc)?);
    }
    let weight = WeightSpec::l2(-0.5 - sigma);
    let mut cauchy = Vec::new();
    for pair in solutions.windows(2) {
        let diff: Vec<Complex64> = pair[0].v.values().iter().zip(pair[1].v.values()).map(|(a, b)| a - b).collect();
        let diff = RadialFunction::new(template.grid.clone(), diff)?;
        cauchy.push(weighted_norm(&diff, weight, &template.mode)?);
    }
    let converged = if cauchy.len() < 2 {
        None
    } else if cauchy.iter().all(|&d| d == 0.0) {
        Some(true)
    } else {
        Some(cauchy.windows(2).all(|w| w[1] * LADDER_FACTOR <= w[0]))
    };
    Ok(EpsilonLadder { epsilons: eps_list.to_vec(), solutions, cauchy, converged })
}

/// Power iterations used by [`resolvent_operator_norm`].
pub const OPERATOR_NORM_ITERS: usize = 60;

/// Supremum over sources of `‖v‖_{H^{0,m_out}} / ‖g‖_{H^{0,m_in}}` for the discrete solve.
///
/// Power iteration on `M^H M` with `M = D_out A^{-1} D_in^{-1}`, `D = (w ⟨r⟩^{2m})^{1/2}` and
/// trapezoid weights `w`. Returns a lower bound that converges to the operator norm.
pub fn resolvent_operator_norm(problem: &ModeProblem, bc: BcKind, m_out: f64, m_in: f64) -> Result<f64> {
    if bc == BcKind::Dirichlet {
        return Err(LabError::invalid("operator norm needs an outgoing or incoming condition"));
    }
    let op = assemble_mode_operator(problem, bc)?;
    let n = op.len();
    let adj = Tridiagonal {
        sub: (0..n).map(|i| if i > 0 { op.sup[i - 1].conj() } else { Complex64::new(0.0, 0.0) }).collect(),
        diag: op.diag.iter().map(|d| d.conj()).collect(),
        sup: (0..n).map(|i| if i + 1 < n { op.sub[i + 1].conj() } else { Complex64::new(0.0, 0.0) }).collect(),
    };
    let w = problem.grid.trapezoid_weights();
    let r = problem.grid.r();
    let d_out: Vec<f64> = (0..n).map(|i| (w[i] * bracket(r[i]).powf(2.0 * m_out)).sqrt()).collect();
    let d_in: Vec<f64> = (0..n).map(|i| (w[i] * bracket(r[i]).powf(2.0 * m_in)).sqrt()).collect();
    let l2 = |x: &[Complex64]| x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let mut x: Vec<Complex64> = (0..n).map(|i| Complex64::new(d_in[i], 0.0)).collect();
    let mut estimate = 0.0;
    for _ in 0..OPERATOR_NORM_ITERS {
        let nx = l2(&x);
        if !(nx > 0.0) {
            return Err(LabError::Numerical("operator norm iteration collapsed".into()));
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let g: Vec<Complex64> = (0..n).map(|i| x[i] / d_in[i]).collect();
        let (v, _) = op.solve(&g)?;
        let y: Vec<Complex64> = (0..n).map(|i| v[i] * d_out[i]).collect();
        estimate = l2(&y);
        let b: Vec<Complex64> = (0..n).map(|i| y[i] * d_out[i]).collect();
        let (t, _) = adj.solve(&b)?;
        x = (0..n).map(|i| t[i] / d_in[i]).collect();
    }
    if !estimate.is_finite() {
        return Err(LabError::NonFinite("operator norm"));
    }
    Ok(estimate)
}

/// Catalog of measured resolvent estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateId {
    /// `‖u‖_{H^{0,-1/2-σ}}` against `λ^{-1/2}‖f‖_{H^{0,1/2+σ}}`.
    LapResolvent,
    /// `‖u‖_{H^{0,-3/2+σ}}` against `(1+λ)^{-1/2}‖f‖`.
    LapUniform,
    /// `‖u‖_{H^{s,-1/2-σ}}` against `λ^{s/2}(λ^{-C}+1)‖f‖`, `s = 0`.
    LapFarS0,
    LapFarS1,
    /// `‖u‖_{H^{1,-1/2-σ}}` against `(λ^{-C} + e^{C√λ})‖f‖`.
    LapGlobalS1,
    /// `‖u‖_{H^{s,-1/2-σ}}` against `λ^{(s-1)/2}‖f‖`.
    NontrappingS0,
    NontrappingS1,
    /// `‖u‖_{H^{1,-1/2-σ}}` against `λ^{-1/2}‖f‖`.
    LowEnergyH1,
    /// `‖u‖_{H^{1,-1/2-σ}}` against `‖f‖`.
    LowEnergyH1Uniform,
    /// `‖u‖_{H^{0,-3/2+σ}}` against `‖f‖`.
    LowEnergyWeak,
    /// `ε‖u‖²_{L²}` against `‖f‖_{H^{0,1/2+σ}}‖u‖_{H^{0,-1/2-σ}}`.
    Charge,
    /// `λ^{1/2}‖u‖_{H^{0,-1/2-σ}}` against `‖∇u‖_{H^{0,-1/2-σ}} + ‖u‖_{H^{0,-3/2-σ}} + ‖f‖`.
    Energy,
    /// `λ∫_{r≥2R}⟨r⟩^{-1-2σ}|u|²` against the gradient, weak-mass and data integrals over `r ≥ R`.
    ExteriorEnergy,
    /// Angular and radiation-condition norms over `r ≥ 2R` against data on `r ≥ R` and mass on `[R, 4R]`.
    Sommerfeld,
}

impl EstimateId {
    pub const ALL: [EstimateId; 14] = [
        EstimateId::LapResolvent,
        EstimateId::LapUniform,
        EstimateId::LapFarS0,
        EstimateId::LapFarS1,
        EstimateId::LapGlobalS1,
        EstimateId::NontrappingS0,
        EstimateId::NontrappingS1,
        EstimateId::LowEnergyH1,
        EstimateId::LowEnergyH1Uniform,
        EstimateId::LowEnergyWeak,
        EstimateId::Charge,
        EstimateId::Energy,
        EstimateId::ExteriorEnergy,
        EstimateId::Sommerfeld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimateId::LapResolvent => "lap_resolvent",
            EstimateId::LapUniform => "lap_uniform",
            EstimateId::LapFarS0 => "lap_far_s0",
            EstimateId::LapFarS1 => "lap_far_s1",
            EstimateId::LapGlobalS1 => "lap_global_s1",
            EstimateId::NontrappingS0 => "nontrapping_s0",
            EstimateId::NontrappingS1 => "nontrapping_s1",
            EstimateId::LowEnergyH1 => "low_energy_h1",
            EstimateId::LowEnergyH1Uniform => "low_energy_h1_uniform",
            EstimateId::LowEnergyWeak => "low_energy_weak",
            EstimateId::Charge => "charge",
            EstimateId::Energy => "energy",
            EstimateId::ExteriorEnergy => "exterior_energy",
            EstimateId::Sommerfeld => "sommerfeld",
        }
    }
}

impl fmt::Display for EstimateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimateId {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        EstimateId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| LabError::invalid(format!("unknown estimate id `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeParams {
    pub sigma: f64,
    /// Exponent `C` in the `λ^{-C}` and `e^{C√λ}` factors.
    pub c_exp: f64,
    /// Region radius `R` for the exterior estimates.
    pub region_radius: f64,
}

impl Default for GaugeParams {
    fn default() -> Self {
        GaugeParams { sigma: 0.25, c_exp: 2.0, region_radius: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeReport {
    pub estimate_id: EstimateId,
    pub n: u32,
    pub l: u32,
    pub lambda: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub lhs: f64,
    /// Canonical λ-factor times `data_norm`.
    pub rhs_factor: f64,
    pub ratio: f64,
    /// Data-side norm the factor multiplies.
    pub data_norm: f64,
    /// λ-factor alone.
    pub factor: f64,
    pub flag: Option<&'static str>,
}

impl GaugeReport {
    pub const CSV_HEADER: &'static str = "estimate_id,n,l,lambda,epsilon,sigma,lhs,rhs_factor,ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.estimate_id,
            self.n,
            self.l,
            fmt_num(self.lambda),
            fmt_num(self.epsilon),
            fmt_num(self.sigma),
            fmt_num(self.lhs),
            fmt_num(self.rhs_factor),
            fmt_num(self.ratio)
        )
    }

    /// `lhs / data_norm`, the measured operator-norm proxy before dividing by the λ-factor.
    pub fn raw_ratio(&self) -> f64 {
        if self.data_norm > 0.0 {
            self.lhs / self.data_norm
        } else {
            f64::NAN
        }
    }
}

/// Angular and radiation-condition parts of the radiation gauge over `r >= r_lo`, weight exponent `m`.
///
/// `condition` selects the tested radiation condition: `v_r - kv/r ∓ izv`.
pub(crate) fn radiation_parts(sol: &ModeSolution, condition: BcKind, m: f64, r_lo: f64, r_hi: f64) -> (f64, f64) {
    let grid = sol.v.grid();
    let r = grid.r();
    let v = sol.v.values();
    let dv = sol.v_r();
    let sign = if condition == BcKind::Incoming { -1.0 } else { 1.0 };
    let iz = Complex64::new(0.0, sign) * sol.z();
    let k = sol.problem.mode.half_power();
    let ang = sol.problem.mode.angular();
    let idx = grid.index_range(r_lo, r_hi);
    let w: Vec<f64> = r.iter().map(|&x| bracket(x).powf(2.0 * m)).collect();
    let angular: Vec<f64> = (0..r.len()).map(|i| w[i] * ang / (r[i] * r[i]) * v[i].norm_sqr()).collect();
    let radiation: Vec<f64> = (0..r.len())
        .map(|i| w[i] * (dv[i] - v[i] * (k / r[i]) - iz * v[i]).norm_sqr())
        .collect();
    (grid.integrate_range(&angular, idx.clone()).sqrt(), grid.integrate_range(&radiation, idx).sqrt())
}

/// Evaluate one catalog estimate on a solution; `f` is the unreduced source.
pub fn estimate_gauge(sol: &ModeSolution, f: &RadialFunction, id: EstimateId, params: &GaugeParams) -> Result<GaugeReport> {
    if !f.same_grid(&sol.v) {
        return Err(LabError::invalid("source and solution live on different grids"));
    }
    let mode = &sol.problem.mode;
    let lam = sol.problem.lambda;
    let eps = sol.problem.epsilon;
    let sigma = params.sigma;
    let c = params.c_exp;
    let g = mode_source(f, mode);
    let v = &sol.v;
    let norm = |s: u8, m: f64| -> Result<f64> { weighted_norm(v, WeightSpec { s, m }, mode) };
    let data = || weighted_norm(&g, WeightSpec::l2(0.5 + sigma), mode);
    let (lhs, factor, data_norm) = match id {
        EstimateId::LapResolvent => (norm(0, -0.5 - sigma)?, lam.powf(-0.5), data()?),
        EstimateId::LapUniform => (norm(0, -1.5 + sigma)?, (1.0 + lam).powf(-0.5), data()?),
        EstimateId::LapFarS0 => (norm(0, -0.5 - sigma)?, lam.powf(-c) + 1.0, data()?),
        EstimateId::LapFarS1 => (norm(1, -0.5 - sigma)?, lam.sqrt() * (lam.powf(-c) + 1.0), data()?),
        EstimateId::LapGlobalS1 => (norm(1, -0.5 - sigma)?, lam.powf(-c) + (c * lam.sqrt()).exp(), data()?),
        EstimateId::NontrappingS0 => (norm(0, -0.5 - sigma)?, lam.powf(-0.5), data()?),
        EstimateId::NontrappingS1 => (norm(1, -0.5 - sigma)?, 1.0, data()?),
        EstimateId::LowEnergyH1 => (norm(1, -0.5 - sigma)?, lam.powf(-0.5), data()?),
        EstimateId::LowEnergyH1Uniform => (norm(1, -0.5 - sigma)?, 1.0, data()?),
        EstimateId::LowEnergyWeak => (norm(0, -1.5 + sigma)?, 1.0, data()?),
        EstimateId::Charge => {
            let mass = v.l2_norm().powi(2);
            (eps * mass, 1.0, data()? * norm(0, -0.5 - sigma)?)
        }
        EstimateId::Energy => {
            let n0 = norm(0, -0.5 - sigma)?;
            let n1 = norm(1, -0.5 - sigma)?;
            let grad = (n1 * n1 - n0 * n0).max(0.0).sqrt();
            (lam.sqrt() * n0, 1.0, grad + norm(0, -1.5 - sigma)? + data()?)
        }
        EstimateId::ExteriorEnergy => {
            let rr = params.region_radius;
            let m = -0.5 - sigma;
            let outer = weighted_norm_on(v, WeightSpec::l2(m), mode, 2.0 * rr, f64::INFINITY)?;
            let h1 = weighted_norm_on(v, WeightSpec::h1(m), mode, rr, f64::INFINITY)?;
            let l2 = weighted_norm_on(v, WeightSpec::l2(m), mode, rr, f64::INFINITY)?;
            let weak = weighted_norm_on(v, WeightSpec::l2(-1.5 - sigma), mode, rr, f64::INFINITY)?;
            let fdat = weighted_norm_on(&g, WeightSpec::l2(0.5 + sigma), mode, rr, f64::INFINITY)?;
            let grad_sq = (h1 * h1 - l2 * l2).max(0.0);
            (lam * outer * outer, 1.0, grad_sq + weak * weak + fdat * fdat)
        }
        EstimateId::Sommerfeld => {
            let rr = params.region_radius;
            let (ang, rad) = radiation_parts(sol, sol.problem.branch.natural_bc(), -0.5 + sigma, 2.0 * rr, f64::INFINITY);
            let fdat = weighted_norm_on(&g, WeightSpec::l2(0.5 + sigma), mode, rr, f64::INFINITY)?;
            let local = weighted_norm_on(v, WeightSpec::l2(0.0), mode, rr, 4.0 * rr)?;
            (ang + rad, 1.0, fdat + (1.0 + lam.max(0.0).sqrt()) * local)
        }
    };
    let rhs_factor = factor * data_norm;
    let (ratio, flag) = if rhs_factor > 0.0 && rhs_factor.is_finite() {
        (lhs / rhs_factor, None)
    } else {
        (f64::NAN, Some("undefined_ratio"))
    };
    Ok(GaugeReport {
        estimate_id: id,
        n: mode.n,
        l: mode.l,
        lambda: lam,
        epsilon: eps,
        sigma,
        lhs,
        rhs_factor,
        ratio,
        data_norm,
        factor,
        flag,
    })
}
