//! Config-driven sweeps: validation, deterministic parallel execution, sorted CSV reports and a
//! JSON manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterexamples::{
    build_bessel_matching, perturb_and_probe, quasimode_profile, spectral_sanity, BlendWindow, BlowupReport,
    ProbeParams, QuasimodeParams, QuasimodeProfile, PROBE_SPACING,
};
use crate::energies::{classify_dichotomy, normalized_data_size, pohozaev_bound_check, DichotomyParams, DichotomyVerdict, ForcingForm, SphericalEnergySeries};
use crate::error::{LabError, Result};
use crate::evolution::{
    evolve_schrodinger, evolve_wave, half_derivative_data_norm, limiting_amplitude_experiment, local_observables,
    local_smoothing_integral, trajectory_summary, Absorber, EvolveParams, MorawetzSpec,
};
use crate::fit::{loglog_fit, LinearFit};
use crate::identities::{
    carleman_identity_residual, carleman_source, charge_residual, lagrangean_residual, morawetz_residual,
    IdentityResidualReport, MorawetzForm, WeightFunction,
};
use crate::radial::{compact_bump, fmt_num, smooth_step, ModeParams, Profiles, RadialFunction, RadialGrid};
use crate::resolvent::{mode_source, solve_resolvent_mode, Branch, EstimateId, GaugeParams, GaugeReport, ModeProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LapScan,
    Dichotomy,
    Identities,
    CounterexampleBessel,
    CounterexampleQuasimode,
    Smoothing,
    WaveDecay,
    LimitingAmplitude,
    Rage,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::LapScan,
        ExperimentKind::Dichotomy,
        ExperimentKind::Identities,
        ExperimentKind::CounterexampleBessel,
        ExperimentKind::CounterexampleQuasimode,
        ExperimentKind::Smoothing,
        ExperimentKind::WaveDecay,
        ExperimentKind::LimitingAmplitude,
        ExperimentKind::Rage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::LapScan => "lap_scan",
            ExperimentKind::Dichotomy => "dichotomy",
            ExperimentKind::Identities => "identities",
            ExperimentKind::CounterexampleBessel => "counterexample_bessel",
            ExperimentKind::CounterexampleQuasimode => "counterexample_quasimode",
            ExperimentKind::Smoothing => "smoothing",
            ExperimentKind::WaveDecay => "wave_decay",
            ExperimentKind::LimitingAmplitude => "limiting_amplitude",
            ExperimentKind::Rage => "rage",
        }
    }

    fn is_evolution(self) -> bool {
        matches!(
            self,
            ExperimentKind::Smoothing | ExperimentKind::WaveDecay | ExperimentKind::LimitingAmplitude | ExperimentKind::Rage
        )
    }
}

/// Potential `V(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialFamily {
    #[default]
    Free,
    /// `V = a (1 + r)^{-3}`.
    InverseCube { amplitude: f64 },
}

/// Mean-curvature perturbation `θ(r)` of the conic metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricFamily {
    #[default]
    Flat,
    /// `θ = a (1 + r)^{-2}`.
    InverseSquare { amplitude: f64 },
}

fn default_n() -> Vec<u32> {
    vec![3]
}
fn default_l() -> Vec<u32> {
    vec![0]
}
fn default_lambda() -> Vec<f64> {
    vec![1.0]
}
fn default_epsilon() -> Vec<f64> {
    vec![0.0]
}
fn default_sigma() -> Vec<f64> {
    vec![0.25]
}
fn default_m() -> Vec<u32> {
    vec![2, 4, 8, 16]
}
fn default_mu() -> Vec<f64> {
    vec![1.0]
}
fn default_resolution() -> usize {
    1 << 14
}
fn default_out() -> String {
    "labp_out".to_string()
}
fn default_r_k() -> f64 {
    10.0
}
fn default_r0() -> f64 {
    0.25
}
fn default_c_exp() -> f64 {
    2.0
}
fn default_c1() -> f64 {
    16.0
}
fn default_c2() -> f64 {
    8.0
}
fn default_one() -> f64 {
    1.0
}

/// One sweep. Unset optional fields take per-experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_n")]
    pub n_grid: Vec<u32>,
    #[serde(default = "default_l")]
    pub l_grid: Vec<u32>,
    #[serde(default = "default_lambda")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon_grid: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma_grid: Vec<f64>,
    #[serde(default = "default_m")]
    pub m_grid: Vec<u32>,
    #[serde(default = "default_mu")]
    pub mu_grid: Vec<f64>,
    #[serde(default)]
    pub potential: PotentialFamily,
    #[serde(default)]
    pub metric: MetricFamily,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub store_every: Option<usize>,
    #[serde(default = "default_r_k")]
    pub r_k: f64,
    #[serde(default = "default_r0")]
    pub morawetz_r0: f64,
    #[serde(default)]
    pub absorber: Option<bool>,
    #[serde(default = "default_c_exp")]
    pub c_exp: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    #[serde(default = "default_one")]
    pub c_corr: f64,
    #[serde(default)]
    pub estimates: Option<Vec<EstimateId>>,
    #[serde(default = "default_out")]
    pub out_dir: String,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        serde_json::from_value(serde_json::json!({ "experiment": experiment })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        fn nonempty<T>(field: &str, v: &[T]) -> Result<()> {
            if v.is_empty() {
                return Err(LabError::config(field, "grid must not be empty"));
            }
            Ok(())
        }
        fn finite(field: &str, v: &[f64], positive: bool) -> Result<()> {
            for &x in v {
                if !x.is_finite() || (positive && !(x > 0.0)) || x < 0.0 {
                    let need = if positive { "positive" } else { "nonnegative" };
                    return Err(LabError::config(field, format!("entries must be finite and {need}, got {x}")));
                }
            }
            Ok(())
        }
        nonempty("n_grid", &self.n_grid)?;
        nonempty("l_grid", &self.l_grid)?;
        nonempty("lambda_grid", &self.lambda_grid)?;
        nonempty("epsilon_grid", &self.epsilon_grid)?;
        nonempty("sigma_grid", &self.sigma_grid)?;
        nonempty("m_grid", &self.m_grid)?;
        nonempty("mu_grid", &self.mu_grid)?;
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 3) {
            return Err(LabError::config("n_grid", format!("dimension must be at least 3, got {n}")));
        }
        finite("lambda_grid", &self.lambda_grid, true)?;
        finite("epsilon_grid", &self.epsilon_grid, false)?;
        finite("sigma_grid", &self.sigma_grid, true)?;
        finite("mu_grid", &self.mu_grid, true)?;
        if let Some(&s) = self.sigma_grid.iter().find(|&&s| s >= 0.5) {
            return Err(LabError::config("sigma_grid", format!("sigma must lie in (0, 1/2), got {s}")));
        }
        if let Some(&m) = self.m_grid.iter().find(|&&m| m < 2) {
            return Err(LabError::config("m_grid", format!("cutoff radius must be at least 2, got {m}")));
        }
        if !self.resolution.is_power_of_two() || !(1 << 10..=1 << 18).contains(&self.resolution) {
            return Err(LabError::config(
                "resolution",
                format!("must be a power of two in [2^10, 2^18], got {}", self.resolution),
            ));
        }
        if let Some(r) = self.r_max {
            if !(r > 0.0) || !r.is_finite() {
                return Err(LabError::config("r_max", format!("must be positive, got {r}")));
            }
        }
        if let Some(t) = self.t_final {
            if !(t > 0.0) || !t.is_finite() {
                return Err(LabError::config("t_final", format!("must be positive, got {t}")));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(LabError::config("dt", format!("must be positive, got {dt}")));
            }
        }
        if self.store_every == Some(0) {
            return Err(LabError::config("store_every", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(LabError::config("threads", "must be at least 1"));
        }
        for (field, x) in [("r_k", self.r_k), ("morawetz_r0", self.morawetz_r0), ("c1", self.c1), ("c2", self.c2), ("c_corr", self.c_corr)] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(LabError::config(field, format!("must be positive, got {x}")));
            }
        }
        if !self.c_exp.is_finite() || self.c_exp < 0.0 {
            return Err(LabError::config("c_exp", format!("must be nonnegative, got {}", self.c_exp)));
        }
        if let Some(e) = &self.estimates {
            nonempty("estimates", e)?;
        }
        match self.potential {
            PotentialFamily::InverseCube { amplitude } if !amplitude.is_finite() => {
                return Err(LabError::config("potential", "amplitude must be finite"));
            }
            _ => {}
        }
        match self.metric {
            MetricFamily::InverseSquare { amplitude } if !amplitude.is_finite() => {
                return Err(LabError::config("metric", "amplitude must be finite"));
            }
            _ => {}
        }
        match self.experiment {
            ExperimentKind::CounterexampleBessel => {
                if let Some(&l) = self.l_grid.iter().find(|&&l| l % 2 != 0 || l < 4) {
                    return Err(LabError::config("l_grid", format!("Bessel matching needs even l >= 4, got {l}")));
                }
            }
            ExperimentKind::CounterexampleQuasimode => {
                if let Some(&l) = self.l_grid.iter().find(|&&l| l < 4) {
                    return Err(LabError::config("l_grid", format!("quasimodes need l >= 4, got {l}")));
                }
            }
            ExperimentKind::Dichotomy => {
                let r_max = self.resolved_r_max();
                if 10.0 * self.c1 > r_max {
                    return Err(LabError::config("r_max", format!("must reach 10 c1 = {}, got {r_max}", 10.0 * self.c1)));
                }
            }
            _ => {}
        }
        if self.experiment.is_evolution() {
            let r_max = self.resolved_r_max();
            if self.r_k >= 0.5 * r_max {
                return Err(LabError::config("r_k", format!("must be below r_max/2 = {}", 0.5 * r_max)));
            }
            if self.epsilon_grid.iter().any(|&e| e != 0.0) {
                return Err(LabError::config("epsilon_grid", "time evolution runs at epsilon = 0"));
            }
            if self.experiment == ExperimentKind::WaveDecay && 4.0 * self.morawetz_r0 >= r_max {
                return Err(LabError::config("morawetz_r0", "4 r0 must lie inside the grid"));
            }
        }
        Ok(())
    }

    pub fn resolved_r_max(&self) -> f64 {
        self.r_max.unwrap_or(match self.experiment {
            ExperimentKind::Dichotomy => 40.0 * self.c1,
            ExperimentKind::WaveDecay => 64.0,
            ExperimentKind::LimitingAmplitude => 128.0,
            _ => 100.0,
        })
    }

    pub fn resolved_t_final(&self) -> f64 {
        self.t_final.unwrap_or(match self.experiment {
            ExperimentKind::WaveDecay => 40.0,
            ExperimentKind::LimitingAmplitude => 200.0,
            _ => 50.0,
        })
    }

    fn grid(&self) -> Result<Arc<RadialGrid>> {
        Ok(Arc::new(RadialGrid::from_origin(self.resolved_r_max(), self.resolution)?))
    }

    fn profiles(&self, grid: &RadialGrid) -> Result<Arc<Profiles>> {
        let (va, pot): (f64, Box<dyn Fn(f64) -> f64>) = match self.potential {
            PotentialFamily::Free => (0.0, Box::new(|_| 0.0)),
            PotentialFamily::InverseCube { amplitude } => (amplitude.abs(), Box::new(move |r| amplitude * (1.0 + r).powi(-3))),
        };
        let (ta, theta): (f64, Box<dyn Fn(f64) -> f64>) = match self.metric {
            MetricFamily::Flat => (0.0, Box::new(|_| 0.0)),
            MetricFamily::InverseSquare { amplitude } => (amplitude.abs(), Box::new(move |r| amplitude * (1.0 + r).powi(-2))),
        };
        Ok(Arc::new(Profiles::from_fns(grid, pot, theta, va.max(ta), 0.5)?))
    }
}

/// Unreduced source shared by the stationary experiments: a smooth bump on `[1, 5]`.
pub fn reference_source(grid: Arc<RadialGrid>) -> RadialFunction {
    RadialFunction::from_real_fn(grid, |r| compact_bump((r - 3.0) / 2.0))
}

/// Schrödinger data: `u = r^l e^{-r²/2}` in mode variables.
pub fn gaussian_data(grid: Arc<RadialGrid>, mode: &ModeParams) -> RadialFunction {
    let k = mode.half_power();
    let l = mode.l as i32;
    RadialFunction::from_real_fn(grid, move |r| r.powf(k) * r.powi(l) * (-0.5 * r * r).exp())
}

/// Wave data: `u = r^l bump(r/5)`, supported in `r ≤ 5`.
pub fn wave_data(grid: Arc<RadialGrid>, mode: &ModeParams) -> RadialFunction {
    let k = mode.half_power();
    let l = mode.l as i32;
    RadialFunction::from_real_fn(grid, move |r| r.powf(k) * r.powi(l) * compact_bump(r / 5.0))
}

/// Cutoff vanishing near both grid ends: `η((r-a)/a)(1 - η((r-b)/b))`.
pub fn interior_cutoff(grid: Arc<RadialGrid>, a: f64, b: f64) -> RadialFunction {
    RadialFunction::from_real_fn(grid, move |r| smooth_step((r - a) / a) * (1.0 - smooth_step((r - b) / b)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Tuple {
    n: u32,
    l: u32,
    lambda: f64,
    epsilon: f64,
    sigma: f64,
    m: u32,
    mu: f64,
}

impl Tuple {
    fn mode(&self) -> Result<ModeParams> {
        ModeParams::new(self.n, self.l)
    }
}

fn tuples(c: &ExperimentConfig) -> Vec<Tuple> {
    let mut out = Vec::new();
    let base = Tuple { n: 3, l: 0, lambda: f64::NAN, epsilon: 0.0, sigma: f64::NAN, m: 0, mu: f64::NAN };
    for &n in &c.n_grid {
        for &l in &c.l_grid {
            let t = Tuple { n, l, ..base };
            match c.experiment {
                ExperimentKind::LapScan | ExperimentKind::Dichotomy | ExperimentKind::Identities => {
                    for &lambda in &c.lambda_grid {
                        for &epsilon in &c.epsilon_grid {
                            for &sigma in &c.sigma_grid {
                                out.push(Tuple { lambda, epsilon, sigma, ..t });
                            }
                        }
                    }
                }
                ExperimentKind::CounterexampleBessel => {
                    for &sigma in &c.sigma_grid {
                        for &m in &c.m_grid {
                            out.push(Tuple { sigma, m, ..t });
                        }
                    }
                }
                ExperimentKind::Smoothing => {
                    for &sigma in &c.sigma_grid {
                        out.push(Tuple { sigma, ..t });
                    }
                }
                ExperimentKind::LimitingAmplitude => {
                    for &mu in &c.mu_grid {
                        out.push(Tuple { mu, ..t });
                    }
                }
                ExperimentKind::CounterexampleQuasimode | ExperimentKind::WaveDecay | ExperimentKind::Rage => out.push(t),
            }
        }
    }
    out.sort_by(|a, b| key_cmp(&param_key(c.experiment, a), &param_key(c.experiment, b)));
    out.dedup();
    out
}

fn param_key(kind: ExperimentKind, t: &Tuple) -> Vec<f64> {
    let (n, l) = (t.n as f64, t.l as f64);
    match kind {
        ExperimentKind::LapScan | ExperimentKind::Dichotomy | ExperimentKind::Identities => {
            vec![n, l, t.lambda, t.epsilon, t.sigma]
        }
        ExperimentKind::CounterexampleBessel => vec![n, l, t.sigma, t.m as f64],
        ExperimentKind::Smoothing => vec![n, l, t.sigma],
        ExperimentKind::LimitingAmplitude => vec![n, l, t.mu],
        ExperimentKind::CounterexampleQuasimode | ExperimentKind::WaveDecay | ExperimentKind::Rage => vec![n, l],
    }
}

fn key_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Columns of each report, with their descriptions; a trailing `flag` column is always appended.
pub fn columns(kind: ExperimentKind) -> Vec<(&'static str, &'static str)> {
    let mode = [("n", "spatial dimension"), ("l", "angular order")];
    let mut out: Vec<(&'static str, &'static str)> = Vec::new();
    match kind {
        ExperimentKind::LapScan => {
            out.push(("estimate_id", "catalog estimate"));
            out.extend(mode);
            out.extend([
                ("lambda", "spectral parameter"),
                ("epsilon", "distance from the real axis"),
                ("sigma", "weight exponent offset"),
                ("lhs", "solution-side weighted norm"),
                ("rhs_factor", "lambda factor times data norm"),
                ("ratio", "lhs / rhs_factor"),
                ("raw_ratio", "lhs / data norm"),
            ]);
        }
        ExperimentKind::Dichotomy => {
            out.extend(mode);
            out.extend([
                ("lambda", "spectral parameter"),
                ("epsilon", "distance from the real axis"),
                ("sigma", "weight exponent offset"),
                ("verdict", "0 bounded, 1 exponential growth, 2 indeterminate"),
                ("threshold", "required growth rate C2(1 + sqrt(lambda))"),
                ("coverage", "fraction of window nodes at or above the threshold"),
                ("rate_quantile", "growth rate exceeded on the required fraction of the window"),
                ("r0", "radius of the bounded-mass certificate (NaN unless bounded)"),
                ("fitted_constant", "mass bound over (lambda^-C + 1) delta"),
                ("delta", "normalized data size"),
                ("pohozaev_k1", "fitted Pohozaev data constant"),
                ("pohozaev_k2", "fitted Pohozaev mass constant"),
            ]);
        }
        ExperimentKind::Identities => {
            out.extend([("identity_id", "identity name")]);
            out.extend(mode);
            out.extend([
                ("lambda", "spectral parameter"),
                ("epsilon", "distance from the real axis"),
                ("N", "grid points"),
                ("lhs", "left side"),
                ("rhs", "right side"),
                ("residual", "|lhs - rhs|"),
                ("relative_residual", "residual / max(|lhs|, |rhs|)"),
                ("sigma", "weight exponent offset of the sweep tuple"),
            ]);
        }
        ExperimentKind::CounterexampleBessel => {
            out.extend([
                ("m", "cutoff radius"),
                ("l", "angular order"),
                ("lambda_m", "m^(-l/10)"),
                ("eps_m", "lambda_m / 100"),
                ("f_norm", "data norm in H^{0,1/2+sigma}"),
                ("u_norm", "solution norm in H^{0,-1/2-sigma}"),
                ("ratio", "u_norm / f_norm"),
                ("n", "spatial dimension"),
                ("sigma", "weight exponent offset"),
                ("support_leak", "defect mass outside [m, 2m] relative to its peak"),
                ("cross_validation_error", "relative distance between the resolvent solve and u_m"),
                ("zero_window_count", "eigenvalues of the perturbed operator in [-lambda_m/2, lambda_m/2)"),
                ("negative_count_stable", "1 if the perturbation keeps the count below -lambda_m"),
            ]);
        }
        ExperimentKind::CounterexampleQuasimode => {
            out.extend([
                ("l", "angular order"),
                ("n", "spatial dimension"),
                ("lambda_l", "(l + 1)(l + n)"),
                ("near_mass", "mass on the cutoff's support"),
                ("tail_mass", "mass where the cutoff is below one"),
                ("residual_norm", "norm of the cutoff commutator"),
                ("quasimode_ratio", "residual_norm / cutoff_norm"),
            ]);
        }
        ExperimentKind::Smoothing => {
            out.extend(mode);
            out.extend([
                ("sigma", "weight exponent offset"),
                ("t", "time"),
                ("integral", "running local smoothing integral"),
                ("data_norm", "half-derivative data norm D"),
                ("normalized", "integral / D"),
                ("local_mass", "mass in r <= r_k"),
            ]);
        }
        ExperimentKind::Rage => {
            out.extend(mode);
            out.extend([
                ("t", "time"),
                ("l2_norm", "weighted L2 norm"),
                ("local_mass", "mass in r <= r_k"),
                ("local_energy", "gradient energy in r <= r_k"),
                ("sup_u", "sup of |u| over r >= 5h"),
            ]);
        }
        ExperimentKind::WaveDecay => {
            out.extend(mode);
            out.extend([
                ("t", "time"),
                ("l2_norm", "weighted L2 norm"),
                ("local_mass", "mass in r <= r_k"),
                ("local_energy", "energy in r <= r_k"),
                ("sup_u", "sup of |u| over r >= 5h"),
                ("E_K", "Morawetz vector-field energy"),
            ]);
        }
        ExperimentKind::LimitingAmplitude => {
            out.extend(mode);
            out.extend([
                ("mu", "forcing frequency"),
                ("t", "time"),
                ("discrepancy_radiating", "L2(K) distance to the radiating Helmholtz solution"),
                ("relative_radiating", "discrepancy_radiating over that solution's L2(K) norm"),
                ("discrepancy_opposite", "L2(K) distance to the opposite-branch solution"),
                ("relative_opposite", "discrepancy_opposite over that solution's L2(K) norm"),
            ]);
        }
    }
    out
}

/// Every flag value a report row may carry.
pub const FLAG_VALUES: [(&str, &str); 15] = [
    ("bounded", "informational: definite dichotomy verdict, unused fields are NaN"),
    ("exponential_growth", "informational: definite dichotomy verdict, unused fields are NaN"),
    ("data_truncated", "data norm computed on a truncated block"),
    ("boundary_dominated", "r_max is below the radius where the radiation condition is trusted"),
    ("undefined_ratio", "the gauge denominator vanished"),
    ("indeterminate", "the dichotomy classifier reached no verdict"),
    ("infeasible", "no Pohozaev constants fit the flux"),
    ("normalization_dependent", "Pohozaev fit with zero data size"),
    ("cross_validation_failed", "the resolvent solve of the probe failed"),
    ("zero_data", "data norm vanished"),
    ("spectral_check_failed", "an eigenvalue entered the zero window"),
    ("reflection_risk", "Schrodinger data may reach r_max without an absorber"),
    ("near_resonance", "a Helmholtz reference solve hit a discrete resonance"),
    ("degenerate_identity", "both sides vanish at epsilon = 0; the relative residual is roundoff"),
    ("numerical_failure", "the tuple's pipeline failed; metrics are NaN"),
];

/// Flags that annotate a row without counting as warnings.
pub const INFO_FLAGS: [&str; 2] = ["bounded", "exponential_growth"];

struct Row {
    key: Vec<f64>,
    cells: Vec<String>,
    flag: Option<&'static str>,
}

fn num(x: f64) -> String {
    fmt_num(x)
}

fn run_tuple(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    match c.experiment {
        ExperimentKind::LapScan => lap_scan(c, t),
        ExperimentKind::Dichotomy => dichotomy(c, t),
        ExperimentKind::Identities => identities(c, t),
        ExperimentKind::CounterexampleBessel => bessel(c, t),
        ExperimentKind::CounterexampleQuasimode => quasimode(c, t),
        ExperimentKind::Smoothing => smoothing(c, t),
        ExperimentKind::Rage => rage(c, t),
        ExperimentKind::WaveDecay => wave_decay(c, t),
        ExperimentKind::LimitingAmplitude => limiting(c, t),
    }
}

fn stationary_solve(c: &ExperimentConfig, t: &Tuple) -> Result<(crate::ModeSolution, RadialFunction)> {
    let grid = c.grid()?;
    let profiles = c.profiles(&grid)?;
    let problem = ModeProblem::new(t.mode()?, profiles, t.lambda, t.epsilon, Branch::Plus, grid.clone())?;
    let f = reference_source(grid);
    let g = mode_source(&f, &problem.mode);
    let sol = solve_resolvent_mode(&problem, &g, Branch::Plus.natural_bc())?;
    Ok((sol, f))
}

fn lap_scan(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let (sol, f) = stationary_solve(c, t)?;
    let params = GaugeParams { sigma: t.sigma, c_exp: c.c_exp, ..GaugeParams::default() };
    let ids = c.estimates.clone().unwrap_or_else(|| EstimateId::ALL.to_vec());
    let boundary = sol.problem.boundary_dominated();
    let mut rows = Vec::new();
    for id in ids {
        let rep = crate::resolvent::estimate_gauge(&sol, &f, id, &params)?;
        let mut key = param_key(c.experiment, t);
        key.push(EstimateId::ALL.iter().position(|&e| e == id).unwrap_or(0) as f64);
        rows.push(Row {
            key,
            cells: gauge_cells(&rep),
            flag: rep.flag.or(if boundary { Some("boundary_dominated") } else { None }),
        });
    }
    Ok(rows)
}

fn gauge_cells(rep: &GaugeReport) -> Vec<String> {
    let mut cells: Vec<String> = rep.csv_row().split(',').map(str::to_string).collect();
    cells.push(num(rep.raw_ratio()));
    cells
}

fn dichotomy(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let (sol, f) = stationary_solve(c, t)?;
    let (delta, scale) = normalized_data_size(&sol, &f, t.sigma, c.c1)?;
    let s = Complex64::new(scale, 0.0);
    let series = SphericalEnergySeries::from_profile(
        &sol.v.scaled(s),
        &f.scaled(s),
        sol.problem.mode,
        t.lambda,
        t.epsilon,
        sol.problem.branch,
        ForcingForm::Literal,
    )?;
    let mut p = DichotomyParams::new(t.lambda, delta, 10.0 * c.c1);
    p.c1 = c.c1;
    p.c2 = c.c2;
    p.bound_exponent = c.c_exp;
    let verdict = classify_dichotomy(&series, &p)?;
    let poh = pohozaev_bound_check(&series, t.lambda, delta, t.sigma);
    let (code, quantile, cov, r0, fitted) = match &verdict {
        DichotomyVerdict::Bounded { r0, fitted_constant, .. } => (0.0, f64::NAN, f64::NAN, *r0, *fitted_constant),
        DichotomyVerdict::ExponentialGrowth { measured_rate, coverage } => (1.0, *measured_rate, *coverage, f64::NAN, f64::NAN),
        DichotomyVerdict::Indeterminate { coverage, rate_quantile, fitted_constant, .. } => {
            (2.0, *rate_quantile, *coverage, f64::NAN, *fitted_constant)
        }
    };
    let mut cells = vec![t.n.to_string(), t.l.to_string(), num(t.lambda), num(t.epsilon), num(t.sigma)];
    cells.extend([code, p.threshold(), cov, quantile, r0, fitted, delta, poh.k1, poh.k2].map(num));
    let flag = if code == 2.0 {
        Some("indeterminate")
    } else if poh.flag.is_some() {
        poh.flag
    } else if sol.problem.boundary_dominated() {
        Some("boundary_dominated")
    } else if cells.iter().any(|s| s == "NaN") {
        Some(verdict_flag(&verdict))
    } else {
        None
    };
    Ok(vec![Row { key: param_key(c.experiment, t), cells, flag }])
}

fn verdict_flag(v: &DichotomyVerdict) -> &'static str {
    match v {
        DichotomyVerdict::Bounded { .. } => "bounded",
        DichotomyVerdict::ExponentialGrowth { .. } => "exponential_growth",
        DichotomyVerdict::Indeterminate { .. } => "indeterminate",
    }
}

fn identity_row(c: &ExperimentConfig, t: &Tuple, idx: usize, rep: &IdentityResidualReport) -> Row {
    let mut key = param_key(c.experiment, t);
    key.push(idx as f64);
    let mut cells: Vec<String> = rep.csv_row().split(',').map(str::to_string).collect();
    // The Carleman source is built at the tuple's λ even though the identity itself is λ-free.
    cells[3] = num(t.lambda);
    cells.push(num(t.sigma));
    let flag = if rep.identity_id == "charge" && t.epsilon == 0.0 { Some("degenerate_identity") } else { None };
    Row { key, cells, flag }
}

fn identities(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let (sol, f) = stationary_solve(c, t)?;
    let grid = sol.problem.grid.clone();
    let chi = interior_cutoff(grid.clone(), 1.0, grid.r_max() / 4.0);
    let form = if t.epsilon == 0.0 { MorawetzForm::RealEnergy } else { MorawetzForm::AbsorbedEpsilon };
    let w = WeightFunction::morawetz_default(grid.clone(), t.sigma)?;
    let u_c = sol.u().map(|r, u| u * chi.values()[grid.nearest_index(r)].re);
    let src = carleman_source(&u_c, sol.problem.mode, t.lambda);
    let reports = [
        charge_residual(&sol, &f)?,
        lagrangean_residual(&sol, &chi)?,
        morawetz_residual(&sol, &w, &chi, form)?,
        carleman_identity_residual(&u_c, &WeightFunction::carleman_bracket(grid), 1.0, &src, sol.problem.mode)?,
    ];
    Ok(reports.iter().enumerate().map(|(i, r)| identity_row(c, t, i, r)).collect())
}

fn probe_params(c: &ExperimentConfig, sigma: f64) -> ProbeParams {
    ProbeParams { sigma, spacing: PROBE_SPACING * (1 << 14) as f64 / c.resolution as f64, ..ProbeParams::default() }
}

fn bessel(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let params = probe_params(c, t.sigma);
    let grid = Arc::new(RadialGrid::from_origin(params.reach * t.m as f64, (params.reach * t.m as f64 / params.spacing).round() as usize)?);
    let base = build_bessel_matching(t.l, t.n, BlendWindow::default(), grid)?;
    let rep: BlowupReport = perturb_and_probe(&base, t.m, &params)?;
    let sanity = spectral_sanity(&base, t.m, &params)?;
    let mut cells: Vec<String> = rep.csv_row().split(',').map(str::to_string).collect();
    cells.extend([
        t.n.to_string(),
        num(t.sigma),
        num(rep.support_leak),
        num(rep.cross_validation_error),
        sanity.zero_window_count.to_string(),
        (sanity.negative_count_stable() as u8).to_string(),
    ]);
    let flag = rep.flag.or(if sanity.zero_window_count > 0 { Some("spectral_check_failed") } else { None });
    Ok(vec![Row { key: param_key(c.experiment, t), cells, flag }])
}

fn quasimode(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let mut p = QuasimodeParams::new(t.l, t.n - 1);
    p.intervals = 3 * c.resolution / 4;
    let prof: QuasimodeProfile = quasimode_profile(&p)?;
    let mut cells: Vec<String> = prof.csv_row().split(',').map(str::to_string).collect();
    // Report the ambient dimension rather than the sphere's.
    cells[1] = t.n.to_string();
    Ok(vec![Row { key: param_key(c.experiment, t), cells, flag: None }])
}

fn evolution_problem(c: &ExperimentConfig, t: &Tuple) -> Result<ModeProblem> {
    let grid = c.grid()?;
    let profiles = c.profiles(&grid)?;
    ModeProblem::new(t.mode()?, profiles, 0.0, 0.0, Branch::Plus, grid)
}

fn schrodinger_run(c: &ExperimentConfig, t: &Tuple) -> Result<(ModeProblem, RadialFunction, crate::evolution::Trajectory)> {
    let problem = evolution_problem(c, t)?;
    let v0 = gaussian_data(problem.grid.clone(), &problem.mode);
    let dt = c.dt.unwrap_or(0.01);
    let params = EvolveParams::new(dt, c.resolved_t_final(), c.store_every.unwrap_or(25))?;
    let absorber = if c.absorber.unwrap_or(true) { Some(Absorber::default()) } else { None };
    let traj = evolve_schrodinger(&problem, &v0, &params, absorber)?;
    Ok((problem, v0, traj))
}

fn smoothing(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let (problem, v0, traj) = schrodinger_run(c, t)?;
    let (d, truncated) = half_derivative_data_norm(&problem, &v0)?;
    let series = local_smoothing_integral(&traj, t.sigma, c.resolved_t_final(), d)?;
    let obs = local_observables(&traj, c.r_k)?;
    let flag = traj.flags.first().copied().or(if truncated { Some("data_truncated") } else { None });
    Ok(series
        .times
        .iter()
        .enumerate()
        .map(|(i, &time)| {
            let mut key = param_key(c.experiment, t);
            key.push(time);
            let cells = vec![
                t.n.to_string(),
                t.l.to_string(),
                num(t.sigma),
                num(time),
                num(series.integral[i]),
                num(d),
                num(series.integral[i] / d),
                num(obs.local_mass[i]),
            ];
            Row { key, cells, flag }
        })
        .collect())
}

fn rage(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let (_, _, traj) = schrodinger_run(c, t)?;
    let rows = trajectory_summary(&traj, c.r_k, None)?;
    let flag = traj.flags.first().copied();
    Ok(rows
        .iter()
        .map(|s| {
            let mut key = param_key(c.experiment, t);
            key.push(s.t);
            let mut cells = vec![t.n.to_string(), t.l.to_string()];
            cells.extend([s.t, s.l2_norm, s.local_mass, s.local_energy, s.sup_u].map(num));
            Row { key, cells, flag }
        })
        .collect())
}

fn wave_step(c: &ExperimentConfig, grid: &RadialGrid) -> (f64, usize) {
    let dt = c.dt.unwrap_or(0.5 * grid.h());
    let every = c.store_every.unwrap_or(((0.25 / dt).round() as usize).max(1));
    (dt, every)
}

fn wave_decay(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let problem = evolution_problem(c, t)?;
    let u0 = wave_data(problem.grid.clone(), &problem.mode);
    let u1 = RadialFunction::zeros(problem.grid.clone());
    let (dt, every) = wave_step(c, &problem.grid);
    let params = EvolveParams::new(dt, c.resolved_t_final(), every)?;
    let traj = evolve_wave(&problem, &u0, &u1, &params, None)?;
    let spec = MorawetzSpec::new(&problem.grid, c.morawetz_r0)?;
    let rows = trajectory_summary(&traj, c.r_k, Some(&spec))?;
    Ok(rows
        .iter()
        .map(|s| {
            let mut key = param_key(c.experiment, t);
            key.push(s.t);
            let mut cells = vec![t.n.to_string(), t.l.to_string()];
            cells.extend([s.t, s.l2_norm, s.local_mass, s.local_energy, s.sup_u, s.e_k].map(num));
            Row { key, cells, flag: None }
        })
        .collect())
}

fn limiting(c: &ExperimentConfig, t: &Tuple) -> Result<Vec<Row>> {
    let problem = evolution_problem(c, t)?;
    let f = reference_source(problem.grid.clone());
    let (dt, every) = wave_step(c, &problem.grid);
    let params = EvolveParams::new(dt, c.resolved_t_final(), every)?;
    let la = limiting_amplitude_experiment(&problem, &f, t.mu, &params, c.r_k)?;
    Ok(la
        .times
        .iter()
        .enumerate()
        .map(|(i, &time)| {
            let mut key = param_key(c.experiment, t);
            key.push(time);
            let mut cells = vec![t.n.to_string(), t.l.to_string()];
            let a = la.discrepancy_radiating[i];
            let b = la.discrepancy_opposite[i];
            cells.extend([t.mu, time, a, a / la.radiating_norm, b, b / la.opposite_norm].map(num));
            Row { key, cells, flag: la.flag }
        })
        .collect())
}

fn failure_row(c: &ExperimentConfig, t: &Tuple) -> Row {
    let cols = columns(c.experiment);
    let mut cells = vec!["NaN".to_string(); cols.len()];
    for (i, (name, _)) in cols.iter().enumerate() {
        cells[i] = match *name {
            "n" => t.n.to_string(),
            "l" => t.l.to_string(),
            "m" => t.m.to_string(),
            "lambda" => num(t.lambda),
            "epsilon" => num(t.epsilon),
            "sigma" => num(t.sigma),
            "mu" => num(t.mu),
            "estimate_id" | "identity_id" => "none".to_string(),
            _ => continue,
        };
    }
    Row { key: param_key(c.experiment, t), cells, flag: Some("numerical_failure") }
}

/// Fits summarizing a sweep, keyed by name.
fn sweep_fits(c: &ExperimentConfig, rows: &[Row]) -> BTreeMap<String, LinearFit> {
    let mut fits = BTreeMap::new();
    let cols = columns(c.experiment);
    let idx = |name: &str| cols.iter().position(|(n, _)| *n == name);
    let cell = |r: &Row, name: &str| idx(name).and_then(|i| r.cells[i].parse::<f64>().ok());
    match c.experiment {
        ExperimentKind::CounterexampleBessel => {
            let mut groups: BTreeMap<(String, String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.flag.is_none()) {
                let g = groups.entry((r.cells[7].clone(), r.cells[1].clone(), r.cells[8].clone())).or_default();
                if let (Some(x), Some(y)) = (cell(r, "lambda_m"), cell(r, "ratio")) {
                    g.0.push(x);
                    g.1.push(y);
                }
            }
            for ((n, l, s), (x, y)) in groups {
                if let Ok(fit) = loglog_fit(&x, &y) {
                    fits.insert(format!("ratio_vs_lambda_m[n={n},l={l},sigma={s}]"), fit);
                }
            }
        }
        ExperimentKind::CounterexampleQuasimode => {
            let (x, y): (Vec<f64>, Vec<f64>) =
                rows.iter().filter_map(|r| Some((cell(r, "lambda_l")?, cell(r, "near_mass")?))).unzip();
            if let Ok(fit) = loglog_fit(&x, &y) {
                fits.insert("near_mass_vs_lambda_l".to_string(), fit);
            }
        }
        ExperimentKind::LapScan => {
            let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.flag.is_none()) {
                let g = groups.entry(r.cells[0].clone()).or_default();
                if let (Some(x), Some(y)) = (cell(r, "lambda"), cell(r, "raw_ratio")) {
                    g.0.push(x);
                    g.1.push(y);
                }
            }
            for (id, (x, y)) in groups {
                if x.len() >= 2 {
                    if let Ok(fit) = loglog_fit(&x, &y) {
                        fits.insert(format!("raw_ratio_vs_lambda[{id}]"), fit);
                    }
                }
            }
        }
        _ => {}
    }
    fits
}

/// What a finished run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: usize,
    pub warnings: usize,
    pub failures: Vec<String>,
    pub wall_seconds: f64,
}

/// Validate, execute every tuple, and write `<experiment>.csv` plus `manifest.json` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let start = Instant::now();
    let work = tuples(config);
    let execute = || -> Vec<(Tuple, Result<Vec<Row>>)> { work.par_iter().map(|t| (*t, run_tuple(config, t))).collect() };
    let results = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| LabError::config("threads", e.to_string()))?
            .install(execute),
        None => execute(),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (t, res) in results {
        match res {
            Ok(mut r) => rows.append(&mut r),
            Err(e) if e.is_validation() => return Err(e),
            Err(e) => {
                failures.push(format!("{:?}: {e}", param_key(config.experiment, &t)));
                rows.push(failure_row(config, &t));
            }
        }
    }
    rows.sort_by(|a, b| key_cmp(&a.key, &b.key));

    let out_dir = PathBuf::from(&config.out_dir);
    fs::create_dir_all(&out_dir)?;
    let cols = columns(config.experiment);
    let mut text = cols.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(",");
    text.push_str(",flag\n");
    let mut flags: BTreeMap<&'static str, usize> = BTreeMap::new();
    for r in &rows {
        text.push_str(&r.cells.join(","));
        text.push(',');
        if let Some(f) = r.flag {
            text.push_str(f);
            *flags.entry(f).or_default() += 1;
        }
        text.push('\n');
    }
    let csv_path = out_dir.join(format!("{}.csv", config.experiment.as_str()));
    fs::write(&csv_path, text)?;

    let warnings = flags.iter().filter(|(f, _)| !INFO_FLAGS.contains(f)).map(|(_, n)| n).sum();
    let wall_seconds = start.elapsed().as_secs_f64();
    let mut column_doc: BTreeMap<&str, &str> = cols.iter().copied().collect();
    column_doc.insert("flag", "empty, or one value from flag_values");
    let flag_values: BTreeMap<&str, &str> = FLAG_VALUES.iter().copied().collect();
    let manifest = serde_json::json!({
        "config": config,
        "flags": flags,
        "warnings": warnings,
        "wall_seconds": wall_seconds,
        "version": env!("CARGO_PKG_VERSION"),
        "columns": column_doc,
        "flag_values": flag_values,
        "fits": sweep_fits(config, &rows),
        "failures": failures,
        "rows": rows.len(),
    });
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunSummary { csv_path, manifest_path, rows: rows.len(), warnings, failures, wall_seconds })
}

/// Process exit status for a run outcome: 0 ok, 1 validation error, 2 numerical failure.
pub fn exit_code(outcome: &Result<RunSummary>) -> i32 {
    match outcome {
        Ok(s) if s.failures.is_empty() => 0,
        Ok(_) => 2,
        Err(e) if e.is_validation() => 1,
        Err(LabError::Io(_)) => 1,
        Err(_) => 2,
    }
}
