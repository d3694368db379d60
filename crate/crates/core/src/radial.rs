//! Grids, radial profiles, smooth cutoffs and the per-mode weighted Sobolev norms.

use std::io::{self, Write};
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};

pub const MIN_GRID_POINTS: usize = 16;

/// Fixed-width float formatting shared by every CSV writer (17 significant digits).
pub fn fmt_num(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Uniform radial grid on `[r_min, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    r: Vec<f64>,
    h: f64,
}

impl RadialGrid {
    pub fn uniform(r_min: f64, r_max: f64, n: usize) -> Result<Self> {
        if !(r_min > 0.0) || !r_min.is_finite() {
            return Err(LabError::invalid(format!("r_min must be positive, got {r_min}")));
        }
        if !(r_max > r_min) || !r_max.is_finite() {
            return Err(LabError::invalid(format!(
                "r_max must exceed r_min, got [{r_min}, {r_max}]"
            )));
        }
        if n < MIN_GRID_POINTS {
            return Err(LabError::invalid(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {n}"
            )));
        }
        let h = (r_max - r_min) / (n - 1) as f64;
        let mut r: Vec<f64> = (0..n).map(|i| r_min + i as f64 * h).collect();
        r[n - 1] = r_max;
        Ok(RadialGrid { r, h })
    }

    /// Grid `r_i = (i + 1) h` with `h = r_max / n`, so the first node sits one spacing from the origin.
    pub fn from_origin(r_max: f64, n: usize) -> Result<Self> {
        if !(r_max > 0.0) {
            return Err(LabError::invalid(format!("r_max must be positive, got {r_max}")));
        }
        let h = r_max / n.max(1) as f64;
        Self::uniform(h, r_max, n)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn r_min(&self) -> f64 {
        self.r[0]
    }

    pub fn r_max(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    /// Trapezoid weights over the whole grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.len()];
        w[0] *= 0.5;
        let last = self.len() - 1;
        w[last] *= 0.5;
        w
    }

    pub fn integrate(&self, density: &[f64]) -> f64 {
        self.integrate_range(density, 0..self.len())
    }

    /// Trapezoid rule over the node range `idx` (both ends half-weighted).
    pub fn integrate_range(&self, density: &[f64], idx: std::ops::Range<usize>) -> f64 {
        if idx.len() < 2 {
            return 0.0;
        }
        let (a, b) = (idx.start, idx.end - 1);
        let inner: f64 = density[a + 1..b].iter().sum();
        self.h * (inner + 0.5 * (density[a] + density[b]))
    }

    /// Indices of nodes with `lo <= r <= hi`.
    pub fn index_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.r.partition_point(|&x| x < lo);
        let end = self.r.partition_point(|&x| x <= hi);
        start..end.max(start)
    }

    /// Index of the node closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let k = ((x - self.r_min()) / self.h).round();
        (k.max(0.0) as usize).min(self.len() - 1)
    }
}

pub fn make_grid(r_min: f64, r_max: f64, n: usize) -> Result<Arc<RadialGrid>> {
    RadialGrid::uniform(r_min, r_max, n).map(Arc::new)
}

/// Complex samples of a radial profile on a shared grid.
#[derive(Debug, Clone)]
pub struct RadialFunction {
    grid: Arc<RadialGrid>,
    values: Vec<Complex64>,
}

impl RadialFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::invalid(format!(
                "profile has {} samples but grid has {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(RadialFunction { grid, values })
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.len()];
        RadialFunction { grid, values }
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.r().iter().map(|&r| f(r)).collect();
        RadialFunction { grid, values }
    }

    pub fn from_real_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |r| Complex64::new(f(r), 0.0))
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &RadialFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn map(&self, f: impl Fn(f64, Complex64) -> Complex64) -> Self {
        let values = self
            .grid
            .r()
            .iter()
            .zip(&self.values)
            .map(|(&r, &v)| f(r, v))
            .collect();
        RadialFunction { grid: self.grid.clone(), values }
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        self.map(|_, v| v * c)
    }

    pub fn conj(&self) -> Self {
        self.map(|_, v| v.conj())
    }

    pub fn derivative(&self) -> Vec<Complex64> {
        centered_derivative(&self.values, self.grid.h())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Unweighted `(∫|v|² dr)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let dens: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        self.grid.integrate(&dens).sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "r,re,im")?;
        for (r, v) in self.grid.r().iter().zip(&self.values) {
            writeln!(w, "{},{},{}", fmt_num(*r), fmt_num(v.re), fmt_num(v.im))?;
        }
        Ok(())
    }
}

/// Second-order first derivative: centered inside, one-sided three-point at the ends.
pub fn centered_derivative<T>(values: &[T], h: f64) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = values.len();
    assert!(n >= 3, "derivative needs at least three samples");
    let inv = 0.5 / h;
    let mut d = Vec::with_capacity(n);
    d.push((values[1] * 4.0 - values[0] * 3.0 - values[2]) * inv);
    for i in 1..n - 1 {
        d.push((values[i + 1] - values[i - 1]) * inv);
    }
    d.push((values[n - 1] * 3.0 - values[n - 2] * 4.0 + values[n - 3]) * inv);
    d
}

/// Second-order second derivative: centered inside, one-sided four-point at the ends.
pub fn centered_second_derivative<T>(values: &[T], h: f64) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = values.len();
    assert!(n >= 4, "second derivative needs at least four samples");
    let inv = 1.0 / (h * h);
    let mut d = Vec::with_capacity(n);
    d.push((values[0] * 2.0 - values[1] * 5.0 + values[2] * 4.0 - values[3]) * inv);
    for i in 1..n - 1 {
        d.push((values[i + 1] - values[i] * 2.0 + values[i - 1]) * inv);
    }
    d.push(
        (values[n - 1] * 2.0 - values[n - 2] * 5.0 + values[n - 3] * 4.0 - values[n - 4]) * inv,
    );
    d
}

/// `η(t) = g(t) / (g(t) + g(1 - t))`, `g(t) = exp(-1/t)` for `t > 0`.
pub fn smooth_step(t: f64) -> f64 {
    smooth_step_jet(t)[0]
}

/// `[η, η', η'']` at `t`, in closed form.
pub fn smooth_step_jet(t: f64) -> [f64; 3] {
    if t <= 0.0 {
        return [0.0, 0.0, 0.0];
    }
    if t >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let s = 1.0 - t;
    let a = (-1.0 / t).exp();
    let b = (-1.0 / s).exp();
    let sum = a + b;
    let da = a / (t * t);
    let db = -b / (s * s);
    let dda = a * (1.0 / t.powi(4) - 2.0 / t.powi(3));
    let ddb = b * (1.0 / s.powi(4) - 2.0 / s.powi(3));
    let num = da * b - a * db;
    let dnum = dda * b - a * ddb;
    let dsum = da + db;
    [a / sum, num / (sum * sum), (dnum * sum - 2.0 * num * dsum) / (sum * sum * sum)]
}

/// `exp(1 - 1/(1 - x²))` on `|x| < 1`, zero outside; equals one at the origin.
pub fn compact_bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

/// `⟨r⟩ = (1 + r²)^{1/2}`.
pub fn bracket(r: f64) -> f64 {
    (1.0 + r * r).sqrt()
}

/// Spatial dimension and angular order of one spherical-harmonic mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeParams {
    pub n: u32,
    pub l: u32,
}

impl ModeParams {
    pub fn new(n: u32, l: u32) -> Result<Self> {
        if n < 3 {
            return Err(LabError::invalid(format!("dimension n must be at least 3, got {n}")));
        }
        Ok(ModeParams { n, l })
    }

    /// `L = l + (n - 1)/2`.
    pub fn big_l(&self) -> f64 {
        self.l as f64 + 0.5 * (self.n as f64 - 1.0)
    }

    /// `L(L - 1)`, the coefficient of `r^{-2}` in the mode equation.
    pub fn centrifugal(&self) -> f64 {
        let l = self.big_l();
        l * (l - 1.0)
    }

    /// `l(l + n - 2)`, the spherical Laplacian eigenvalue.
    pub fn angular(&self) -> f64 {
        let l = self.l as f64;
        l * (l + self.n as f64 - 2.0)
    }

    /// `(n - 1)/2`, the exponent relating `v = r^{(n-1)/2} u`.
    pub fn half_power(&self) -> f64 {
        0.5 * (self.n as f64 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub s: u8,
    pub m: f64,
}

impl WeightSpec {
    pub fn new(s: u8, m: f64) -> Result<Self> {
        if s > 1 {
            return Err(LabError::invalid(format!("derivative count must be 0 or 1, got {s}")));
        }
        if !m.is_finite() {
            return Err(LabError::invalid("weight exponent must be finite"));
        }
        Ok(WeightSpec { s, m })
    }

    pub fn l2(m: f64) -> Self {
        WeightSpec { s: 0, m }
    }

    pub fn h1(m: f64) -> Self {
        WeightSpec { s: 1, m }
    }
}

/// Radial reduction of `‖u‖_{H^{s,m}}` for `u = r^{-(n-1)/2} v Y_l`, weight `⟨r⟩^{2m}`.
pub fn weighted_norm(v: &RadialFunction, w: WeightSpec, mode: &ModeParams) -> Result<f64> {
    weighted_norm_on(v, w, mode, f64::NEG_INFINITY, f64::INFINITY)
}

/// As [`weighted_norm`], restricted to nodes with `lo <= r <= hi`.
pub fn weighted_norm_on(
    v: &RadialFunction,
    w: WeightSpec,
    mode: &ModeParams,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if v.is_empty() {
        return Err(LabError::invalid("empty radial function"));
    }
    if !v.is_finite() {
        return Err(LabError::NonFinite("weighted_norm input"));
    }
    let grid = v.grid();
    let r = grid.r();
    let vals = v.values();
    let mut dens: Vec<f64> = r
        .iter()
        .zip(vals)
        .map(|(&ri, vi)| bracket(ri).powf(2.0 * w.m) * vi.norm_sqr())
        .collect();
    if w.s == 1 {
        let dv = v.derivative();
        let k = mode.half_power();
        let ang = mode.angular();
        for i in 0..r.len() {
            let grad = dv[i] - vals[i] * (k / r[i]);
            let e = grad.norm_sqr() + ang / (r[i] * r[i]) * vals[i].norm_sqr();
            dens[i] += bracket(r[i]).powf(2.0 * w.m) * e;
        }
    }
    Ok(grid.integrate_range(&dens, grid.index_range(lo, hi)).sqrt())
}

/// Real potential and mean-curvature profiles sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub potential: Vec<f64>,
    pub theta: Vec<f64>,
    pub amplitude: f64,
    pub sigma0: f64,
}

impl Profiles {
    pub fn new(potential: Vec<f64>, theta: Vec<f64>, amplitude: f64, sigma0: f64) -> Result<Self> {
        if potential.len() != theta.len() {
            return Err(LabError::invalid("potential and curvature lengths differ"));
        }
        if potential.iter().chain(&theta).any(|x| !x.is_finite()) {
            return Err(LabError::NonFinite("profiles"));
        }
        if !(sigma0 > 0.0) {
            return Err(LabError::invalid("decay exponent sigma0 must be positive"));
        }
        if !(amplitude >= 0.0) {
            return Err(LabError::invalid("decay amplitude must be nonnegative"));
        }
        Ok(Profiles { potential, theta, amplitude, sigma0 })
    }

    pub fn free(grid: &RadialGrid) -> Self {
        Profiles {
            potential: vec![0.0; grid.len()],
            theta: vec![0.0; grid.len()],
            amplitude: 0.0,
            sigma0: 1.0,
        }
    }

    pub fn from_fns(
        grid: &RadialGrid,
        potential: impl Fn(f64) -> f64,
        theta: impl Fn(f64) -> f64,
        amplitude: f64,
        sigma0: f64,
    ) -> Result<Self> {
        let v = grid.r().iter().map(|&r| potential(r)).collect();
        let t = grid.r().iter().map(|&r| theta(r)).collect();
        Self::new(v, t, amplitude, sigma0)
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    pub fn is_free(&self) -> bool {
        self.potential.iter().chain(&self.theta).all(|&x| x == 0.0)
    }

    /// First node where `|V| > A(r^{-2-2σ₀} + λ^{1/2} r^{-1-2σ₀})`, if any.
    pub fn potential_decay_violation(&self, grid: &RadialGrid, lambda: f64) -> Option<usize> {
        let (a, s0) = (self.amplitude, self.sigma0);
        grid.r().iter().zip(&self.potential).position(|(&r, &v)| {
            let bound = a * (r.powf(-2.0 - 2.0 * s0) + lambda.max(0.0).sqrt() * r.powf(-1.0 - 2.0 * s0));
            v.abs() > bound * (1.0 + 1e-12)
        })
    }

    /// First node where `|θ| > A r^{-1-2σ₀}`, if any.
    pub fn theta_decay_violation(&self, grid: &RadialGrid) -> Option<usize> {
        let (a, s0) = (self.amplitude, self.sigma0);
        grid.r()
            .iter()
            .zip(&self.theta)
            .position(|(&r, &t)| t.abs() > a * r.powf(-1.0 - 2.0 * s0) * (1.0 + 1e-12))
    }
}
