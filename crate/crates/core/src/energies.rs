//! Spherical energies of a mode solution, their equations of motion, the dimensionless
//! flux system, the Pohozaev flux bound and the mass dichotomy classifier.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::radial::{centered_derivative, fmt_num, ModeParams, RadialFunction};
use crate::resolvent::{mode_source, Branch, ModeProblem, ModeSolution};

/// Normalization of the forcing series `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForcingForm {
    /// `r^{(n-1)/2}(|v| + |v_r|/(r^{-1}+√λ))(|f| + ε|u|)`.
    #[default]
    Literal,
    /// `r^{n-1}(|u| + |∇u|/(r^{-1}+√λ))(|f| + ε|u|)`.
    VolumeWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalEnergySeries {
    pub r: Vec<f64>,
    pub h: f64,
    pub mass: Vec<f64>,
    pub radial: Vec<f64>,
    pub angular: Vec<f64>,
    pub flux: Vec<f64>,
    pub null: Vec<f64>,
    pub complex_flux: Vec<Complex64>,
    pub forcing: Vec<f64>,
    pub mode: ModeParams,
    pub lambda: f64,
    pub epsilon: f64,
    pub z: Complex64,
}

impl SphericalEnergySeries {
    pub const CSV_HEADER: &'static str = "r,M,R,A,F,N,Re_Z,Im_Z,G";

    /// Series of an arbitrary profile `v` with source `f`; `v_r` by centered differences.
    pub fn from_profile(
        v: &RadialFunction,
        f: &RadialFunction,
        mode: ModeParams,
        lambda: f64,
        epsilon: f64,
        branch: Branch,
        form: ForcingForm,
    ) -> Result<Self> {
        let dv = v.derivative();
        Self::build(v, &dv, f, mode, lambda, epsilon, branch, form)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        v: &RadialFunction,
        dv: &[Complex64],
        f: &RadialFunction,
        mode: ModeParams,
        lambda: f64,
        epsilon: f64,
        branch: Branch,
        form: ForcingForm,
    ) -> Result<Self> {
        if !v.same_grid(f) {
            return Err(LabError::invalid("profile and source live on different grids"));
        }
        let grid = v.grid();
        let r = grid.r().to_vec();
        let z = Complex64::new(lambda, branch.sign() * epsilon).sqrt();
        let iz = Complex64::new(0.0, branch.sign()) * z;
        let k = mode.half_power();
        let cc = mode.centrifugal();
        let ang = mode.angular();
        let sq = lambda.max(0.0).sqrt();
        let n = r.len();
        let mut s = SphericalEnergySeries {
            r: r.clone(),
            h: grid.h(),
            mass: Vec::with_capacity(n),
            radial: Vec::with_capacity(n),
            angular: Vec::with_capacity(n),
            flux: Vec::with_capacity(n),
            null: Vec::with_capacity(n),
            complex_flux: Vec::with_capacity(n),
            forcing: Vec::with_capacity(n),
            mode,
            lambda,
            epsilon,
            z,
        };
        for i in 0..n {
            let (ri, vi, di) = (r[i], v.values()[i], dv[i]);
            let zf = di * vi.conj();
            s.mass.push(vi.norm_sqr());
            s.radial.push(di.norm_sqr());
            s.angular.push(cc / (ri * ri) * vi.norm_sqr());
            s.flux.push(zf.re);
            s.null.push((di - iz * vi).norm_sqr());
            s.complex_flux.push(zf);
            let ui = vi.norm() * ri.powf(-k);
            let data = f.values()[i].norm() + epsilon * ui;
            let damp = 1.0 / ri + sq;
            let g = match form {
                ForcingForm::Literal => ri.powf(k) * (vi.norm() + di.norm() / damp) * data,
                ForcingForm::VolumeWeighted => {
                    let ur = (di - vi * (k / ri)) * ri.powf(-k);
                    let grad = (ur.norm_sqr() + ang / (ri * ri) * ui * ui).sqrt();
                    ri.powf(2.0 * k) * (ui + grad / damp) * data
                }
            };
            s.forcing.push(g);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Pohozaev flux `P = λM + R - A`.
    pub fn pohozaev(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.lambda * self.mass[i] + self.radial[i] - self.angular[i]).collect()
    }

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.len())
            .map(|i| {
                [
                    self.r[i],
                    self.mass[i],
                    self.radial[i],
                    self.angular[i],
                    self.flux[i],
                    self.null[i],
                    self.complex_flux[i].re,
                    self.complex_flux[i].im,
                    self.forcing[i],
                ]
                .iter()
                .map(|x| fmt_num(*x))
                .collect::<Vec<_>>()
                .join(",")
            })
            .collect()
    }
}

/// Spherical energies of a solve; `f` is the unreduced source.
pub fn spherical_energies(sol: &ModeSolution, f: &RadialFunction) -> Result<SphericalEnergySeries> {
    spherical_energies_with(sol, f, ForcingForm::Literal)
}

pub fn spherical_energies_with(sol: &ModeSolution, f: &RadialFunction, form: ForcingForm) -> Result<SphericalEnergySeries> {
    let p = &sol.problem;
    let dv = sol.v_r();
    SphericalEnergySeries::build(&sol.v, &dv, f, p.mode, p.lambda, p.epsilon, p.branch, form)
}

/// Residual curves of the radial equations of motion and their bounding envelopes.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionResiduals {
    pub r: Vec<f64>,
    /// `|M' - 2F|`.
    pub mass: Vec<f64>,
    /// `|F' - (R + A - λM)|`.
    pub flux: Vec<f64>,
    /// `|(R + λM - A)' - 2A/r|`.
    pub pohozaev: Vec<f64>,
    /// `|(N - A)' - 2A/r - 2 Im(z)(N + A)|`.
    pub null: Vec<f64>,
    pub mass_envelope: Vec<f64>,
    pub flux_envelope: Vec<f64>,
    pub pohozaev_envelope: Vec<f64>,
    pub null_envelope: Vec<f64>,
}

impl MotionResiduals {
    /// Largest residual of each law over nodes at least `skip` away from either end.
    pub fn max_interior(&self, skip: usize) -> [f64; 4] {
        let n = self.r.len();
        let range = skip.min(n)..n.saturating_sub(skip);
        let mx = |xs: &[f64]| xs[range.clone()].iter().copied().fold(0.0, f64::max);
        [mx(&self.mass), mx(&self.flux), mx(&self.pohozaev), mx(&self.null)]
    }
}

pub fn motion_residuals(series: &SphericalEnergySeries, problem: &ModeProblem) -> Result<MotionResiduals> {
    if series.len() != problem.grid.len() {
        return Err(LabError::invalid("series and problem grids differ"));
    }
    let h = series.h;
    let r = &series.r;
    let n = series.len();
    let lam = series.lambda;
    let b = series.z.im.abs();
    let dm = centered_derivative(&series.mass, h);
    let df = centered_derivative(&series.flux, h);
    let pz: Vec<f64> = (0..n).map(|i| series.radial[i] + lam * series.mass[i] - series.angular[i]).collect();
    let dp = centered_derivative(&pz, h);
    let na: Vec<f64> = (0..n).map(|i| series.null[i] - series.angular[i]).collect();
    let dna = centered_derivative(&na, h);

    let amp = problem.profiles.amplitude;
    let s0 = problem.profiles.sigma0;
    let dim = problem.mode.n as f64;
    let sq = lam.max(0.0).sqrt();
    let mut out = MotionResiduals {
        r: r.clone(),
        mass: Vec::with_capacity(n),
        flux: Vec::with_capacity(n),
        pohozaev: Vec::with_capacity(n),
        null: Vec::with_capacity(n),
        mass_envelope: Vec::with_capacity(n),
        flux_envelope: Vec::with_capacity(n),
        pohozaev_envelope: Vec::with_capacity(n),
        null_envelope: Vec::with_capacity(n),
    };
    for i in 0..n {
        let ri = r[i];
        let (m, rr, a, f, nn) = (series.mass[i], series.radial[i], series.angular[i], series.flux[i], series.null[i]);
        let two_a = 2.0 * a / ri;
        out.mass.push((dm[i] - 2.0 * f).abs());
        out.flux.push((df[i] - (rr + a - lam * m)).abs());
        out.pohozaev.push((dp[i] - two_a).abs());
        out.null.push((dna[i] - two_a - 2.0 * b * (nn + a)).abs());

        let v_bound = amp * (ri.powf(-2.0 - 2.0 * s0) + sq * ri.powf(-1.0 - 2.0 * s0));
        let th_bound = amp * ri.powf(-1.0 - 2.0 * s0);
        let vabs = m.sqrt();
        let drabs = rr.sqrt();
        let gabs = series.forcing[i];
        let q_bound = v_bound + (dim - 1.0) * th_bound / ri;
        out.mass_envelope.push(th_bound * m);
        out.flux_envelope.push(q_bound * m + th_bound * f.abs() + gabs);
        let poh = 2.0 * th_bound * rr + 2.0 * q_bound * f.abs() + 2.0 * series.epsilon * vabs * drabs + 2.0 * gabs;
        out.pohozaev_envelope.push(poh);
        out.null_envelope.push(poh + 2.0 * series.z.norm() * gabs + 2.0 * b * (nn + a));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionlessSeries {
    pub r: Vec<f64>,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub flux_star: Vec<f64>,
    pub pohozaev_star: Vec<f64>,
    pub delta: f64,
    pub c_corr: f64,
    /// Nodes where `M = 0`; `μ, α, β` are NaN there.
    pub excluded: Vec<usize>,
}

impl DimensionlessSeries {
    pub const CSV_HEADER: &'static str = "r,mu,alpha,beta";

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.r.len())
            .map(|i| {
                format!(
                    "{},{},{},{}",
                    fmt_num(self.r[i]),
                    fmt_num(self.mu[i]),
                    fmt_num(self.alpha[i]),
                    fmt_num(self.beta[i])
                )
            })
            .collect()
    }
}

/// Trapezoid tail integrals `∫_{r_i}^{r_max} x ds`.
fn tail_integrals(x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut t = vec![0.0; n];
    for i in (0..n - 1).rev() {
        t[i] = t[i + 1] + 0.5 * h * (x[i] + x[i + 1]);
    }
    t
}

pub fn dimensionless(series: &SphericalEnergySeries, delta: f64, lambda: f64, c_corr: f64) -> DimensionlessSeries {
    let r = &series.r;
    let n = r.len();
    let sq = lambda.max(0.0).sqrt();
    let g: Vec<f64> = series.forcing.iter().map(|x| x.abs()).collect();
    let gw: Vec<f64> = (0..n).map(|i| (1.0 / r[i] + sq) * g[i]).collect();
    let t1 = tail_integrals(&g, series.h);
    let t2 = tail_integrals(&gw, series.h);
    let mut out = DimensionlessSeries {
        r: r.clone(),
        mu: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        beta: Vec::with_capacity(n),
        flux_star: Vec::with_capacity(n),
        pohozaev_star: Vec::with_capacity(n),
        delta,
        c_corr,
        excluded: Vec::new(),
    };
    for i in 0..n {
        let fs = series.flux[i] - c_corr * t1[i];
        let p = lambda * series.mass[i] + series.radial[i] - series.angular[i];
        let ps = p - c_corr * t2[i];
        out.flux_star.push(fs);
        out.pohozaev_star.push(ps);
        let m = series.mass[i];
        if m > 0.0 {
            out.mu.push(r[i] * delta / m);
            out.alpha.push(-r[i] * fs / m);
            out.beta.push(-r[i] * r[i] * ps / m);
        } else {
            out.excluded.push(i);
            out.mu.push(f64::NAN);
            out.alpha.push(f64::NAN);
            out.beta.push(f64::NAN);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DichotomyParams {
    pub lambda: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub r_cap: f64,
    /// Largest admissible fitted constant for a `Bounded` verdict.
    pub bound_factor: f64,
    /// Exponent `C` in `(λ^{-C} + 1)δ`.
    pub bound_exponent: f64,
    /// Fraction of window samples that must show the growth rate.
    pub coverage: f64,
}

impl DichotomyParams {
    pub fn new(lambda: f64, delta: f64, r_cap: f64) -> Self {
        DichotomyParams {
            lambda,
            delta,
            c1: 16.0,
            c2: 8.0,
            r_cap,
            bound_factor: 100.0,
            bound_exponent: 2.0,
            coverage: 0.95,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.c2 * (1.0 + self.lambda.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DichotomyVerdict {
    Bounded {
        r0: f64,
        /// `max M` over `[r0/2, 4 r0]`.
        bound: f64,
        /// `bound / ((λ^{-C} + 1) δ)`.
        fitted_constant: f64,
    },
    ExponentialGrowth {
        /// Rate exceeded at the required fraction of window samples.
        measured_rate: f64,
        coverage: f64,
    },
    Indeterminate {
        coverage: f64,
        rate_quantile: f64,
        fitted_constant: f64,
        /// `(r, -r M'/M)` across the window.
        rate_profile: Vec<(f64, f64)>,
    },
}

impl DichotomyVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            DichotomyVerdict::Bounded { .. } => "bounded",
            DichotomyVerdict::ExponentialGrowth { .. } => "exponential_growth",
            DichotomyVerdict::Indeterminate { .. } => "indeterminate",
        }
    }
}

/// Growth-rate profile `-r M'/M` (inward logarithmic growth per logarithmic radius).
pub fn growth_rate_profile(series: &SphericalEnergySeries) -> Vec<f64> {
    let dm = centered_derivative(&series.mass, series.h);
    (0..series.len())
        .map(|i| if series.mass[i] > 0.0 { -series.r[i] * dm[i] / series.mass[i] } else { f64::NAN })
        .collect()
}

/// Classify the mass profile on `[C1, 10 C1]` (growth) and `[C1, r_cap]` (boundedness).
pub fn classify_dichotomy(series: &SphericalEnergySeries, p: &DichotomyParams) -> Result<DichotomyVerdict> {
    let r_min = series.r[0];
    let r_max = *series.r.last().expect("non-empty series");
    let hi = 10.0 * p.c1;
    if !(p.c1 > r_min) || hi > r_max || p.r_cap > r_max || p.r_cap < p.c1 {
        return Err(LabError::invalid(format!(
            "dichotomy window [{}, {}] with cap {} exceeds grid [{r_min}, {r_max}]",
            p.c1, hi, p.r_cap
        )));
    }
    let rates = growth_rate_profile(series);
    let start = series.r.partition_point(|&x| x < p.c1);
    let end = series.r.partition_point(|&x| x <= hi);
    let window: Vec<(f64, f64)> = (start..end).map(|i| (series.r[i], rates[i])).collect();
    let threshold = p.threshold();
    let hits = window.iter().filter(|(_, k)| *k >= threshold).count();
    let coverage = hits as f64 / window.len().max(1) as f64;
    let mut sorted: Vec<f64> = window.iter().map(|(_, k)| if k.is_nan() { f64::NEG_INFINITY } else { *k }).collect();
    sorted.sort_by(f64::total_cmp);
    let q_idx = (((1.0 - p.coverage) * (sorted.len().saturating_sub(1)) as f64).floor() as usize).min(sorted.len().saturating_sub(1));
    let rate_quantile = sorted.get(q_idx).copied().unwrap_or(f64::NAN);
    if coverage >= p.coverage {
        return Ok(DichotomyVerdict::ExponentialGrowth { measured_rate: rate_quantile, coverage });
    }

    let scale = (p.lambda.powf(-p.bound_exponent) + 1.0) * p.delta;
    let mut best: Option<(f64, f64, f64)> = None;
    let top = p.r_cap.min(r_max / 4.0);
    if top >= p.c1 {
        let steps = 64;
        for j in 0..=steps {
            let r0 = p.c1 * (top / p.c1).powf(j as f64 / steps as f64);
            let a = series.r.partition_point(|&x| x < 0.5 * r0);
            let b = series.r.partition_point(|&x| x <= 4.0 * r0);
            let mx = series.mass[a..b].iter().copied().fold(0.0, f64::max);
            let fitted = if mx == 0.0 { 0.0 } else if scale > 0.0 { mx / scale } else { f64::INFINITY };
            if best.map_or(true, |(_, _, c)| fitted < c) {
                best = Some((r0, mx, fitted));
            }
        }
    }
    match best {
        Some((r0, bound, fitted_constant)) if fitted_constant <= p.bound_factor => {
            Ok(DichotomyVerdict::Bounded { r0, bound, fitted_constant })
        }
        other => Ok(DichotomyVerdict::Indeterminate {
            coverage,
            rate_quantile,
            fitted_constant: other.map_or(f64::INFINITY, |b| b.2),
            rate_profile: window,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PohozaevCheck {
    pub r: Vec<f64>,
    pub pohozaev: Vec<f64>,
    pub margin: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub flag: Option<&'static str>,
}

/// Fit the smallest `K₁ + K₂` with `K₁(r^{-1}+√λ)δ + K₂ r^{-2-2σ} M ≥ P` on all interior nodes.
pub fn pohozaev_bound_check(series: &SphericalEnergySeries, lambda: f64, delta: f64, sigma: f64) -> PohozaevCheck {
    let n = series.len();
    let sq = lambda.max(0.0).sqrt();
    let p: Vec<f64> = (0..n).map(|i| lambda * series.mass[i] + series.radial[i] - series.angular[i]).collect();
    let a: Vec<f64> = series.r.iter().map(|&r| (1.0 / r + sq) * delta).collect();
    let b: Vec<f64> = (0..n).map(|i| series.r[i].powf(-2.0 - 2.0 * sigma) * series.mass[i]).collect();
    let idx: Vec<usize> = (2..n.saturating_sub(2)).filter(|&i| p[i] > 0.0).collect();

    let mut flag = None;
    let (k1, k2) = if idx.is_empty() {
        (0.0, 0.0)
    } else {
        let k2_lo = idx
            .iter()
            .filter(|&&i| a[i] <= 0.0)
            .map(|&i| if b[i] > 0.0 { p[i] / b[i] } else { f64::INFINITY })
            .fold(0.0, f64::max);
        let k2_hi = idx
            .iter()
            .map(|&i| if b[i] > 0.0 { p[i] / b[i] } else { 0.0 })
            .fold(k2_lo, f64::max);
        let k1_of = |k2: f64| -> f64 {
            idx.iter()
                .filter(|&&i| a[i] > 0.0)
                .map(|&i| (p[i] - k2 * b[i]) / a[i])
                .fold(0.0, f64::max)
        };
        if !k2_lo.is_finite() {
            flag = Some("infeasible");
            (f64::INFINITY, f64::INFINITY)
        } else {
            let (mut lo, mut hi) = (k2_lo, k2_hi.max(k2_lo));
            let cost = |k2: f64| k1_of(k2) + k2;
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if cost(m1) <= cost(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let k2 = 0.5 * (lo + hi);
            // Guard against rounding in the last bisection step.
            let k1 = idx
                .iter()
                .filter(|&&i| a[i] > 0.0)
                .map(|&i| (p[i] - k2 * b[i]) / a[i])
                .fold(0.0, f64::max);
            if delta == 0.0 {
                flag = Some("normalization_dependent");
            }
            (k1, k2)
        }
    };
    let margin = (0..n)
        .map(|i| {
            let k1a = if a[i] > 0.0 { k1 * a[i] } else { 0.0 };
            let k2b = if b[i] > 0.0 { k2 * b[i] } else { 0.0 };
            k1a + k2b - p[i]
        })
        .collect();
    PohozaevCheck { r: series.r.clone(), pohozaev: p, margin, k1, k2, flag }
}

/// Data size `‖f‖_{H^{0,1/2+σ}} / ‖u‖_{H^{0,-1/2-σ}(r ≥ r_lo)}` and the normalization factor applied to `u`.
pub fn normalized_data_size(sol: &ModeSolution, f: &RadialFunction, sigma: f64, r_lo: f64) -> Result<(f64, f64)> {
    use crate::radial::{weighted_norm, weighted_norm_on, WeightSpec};
    let mode = &sol.problem.mode;
    let unorm = weighted_norm_on(&sol.v, WeightSpec::l2(-0.5 - sigma), mode, r_lo, f64::INFINITY)?;
    let g = mode_source(f, mode);
    let fnorm = weighted_norm(&g, WeightSpec::l2(0.5 + sigma), mode)?;
    if unorm == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((fnorm / unorm, 1.0 / unorm))
}
