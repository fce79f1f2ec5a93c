//! Grid-based Sinkhorn-type solver for the 1D bridge problem (ε = 1).
//!
//! The potential `φ = log h_T` lives on a uniform grid. One iteration:
//!
//! 1. `h_0(y) = E[exp φ(y + Z)]`, `Z ~ N(0, T)`, by Monte Carlo;
//! 2. `𝒴_0(x) = argmin_y [log h_0(y) + β/2 (x − y)²]` on the source sample;
//! 3. `𝒴_T(x) = argmin_y [φ(y) + β/2 (x − y)²]` on the target sample;
//! 4. `exp φ'(y) = KDE of 𝒴_T(X_T) at y / E[N(y | 𝒴_0(X_0), T) / h_0(𝒴_0(X_0))]`.
//!
//! Step 4 runs in log space with the peak of `φ` pinned at zero. A small uniform
//! density is mixed into the estimate so the ratio stays finite, an optional
//! relaxation blends old and new potentials, and the result is projected onto
//! β-semiconvex functions with `𝒯β−𝒯β+` so the argmin in step 3 stays well posed.
//!
//! After the last iteration `h_t = h_T * N(0, T − t)` is tabulated by
//! quadrature, and the controls are `α(t, x) = ∂ log h_t(𝒴_t(x))`,
//! `σ(t, x) = 1 + ∂² log h_t(𝒴_t(x))/β`. The final paths integrate either
//! `X` under these controls or `Y` under `∂ log h_t`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::log_sum_exp;
use crate::rng::{self, SbbRng};
use crate::sampler::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Phi,
    H,
    LogH,
}

/// A function tabulated on `n` uniformly spaced points of `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
    kind: GridKind,
}

impl Grid1D {
    pub const MIN_POINTS: usize = 16;

    pub fn new(lo: f64, hi: f64, values: Vec<f64>, kind: GridKind) -> Result<Self> {
        if values.len() < Self::MIN_POINTS {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least {} points, got {}",
                Self::MIN_POINTS,
                values.len()
            )));
        }
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid bounds [{lo}, {hi}] are not increasing")));
        }
        if kind == GridKind::H && values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("h grid must be strictly positive".into()));
        }
        Ok(Self { lo, hi, values, kind })
    }

    /// Tabulates `f` on the grid.
    pub fn from_fn(lo: f64, hi: f64, n: usize, kind: GridKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        let step = (hi - lo) / (n.max(2) - 1) as f64;
        Self::new(lo, hi, (0..n).map(|i| f(lo + step * i as f64)).collect(), kind)
    }

    pub fn with_values(&self, values: Vec<f64>, kind: GridKind) -> Self {
        Self {
            lo: self.lo,
            hi: self.hi,
            values,
            kind,
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n() - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n() - 1 {
            self.hi
        } else {
            self.lo + self.step() * i as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.x(i)).collect()
    }

    /// Piecewise-linear interpolation, extended linearly past both ends.
    pub fn interp(&self, x: f64) -> f64 {
        let h = self.step();
        let n = self.n();
        let s = (x - self.lo) / h;
        let i = if s <= 0.0 {
            0
        } else if s >= (n - 1) as f64 {
            n - 2
        } else {
            (s.floor() as usize).min(n - 2)
        };
        let frac = s - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    /// Central difference of the interpolant at grid spacing.
    pub fn deriv(&self, x: f64) -> f64 {
        let h = self.step();
        (self.interp(x + h) - self.interp(x - h)) / (2.0 * h)
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let h = self.step();
        (self.interp(x + h) - 2.0 * self.interp(x) + self.interp(x - h)) / (h * h)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoid rule over the grid.
    pub fn integral(&self) -> f64 {
        let h = self.step();
        let n = self.n();
        h * (self.values.iter().sum::<f64>() - 0.5 * (self.values[0] + self.values[n - 1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    pub beta: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "iterations")]
    pub iterations: usize,
    /// Monte-Carlo draws for `h_0`.
    #[serde(default = "n_mc")]
    pub n_mc: usize,
    /// Euler steps for the final simulation.
    #[serde(default = "n_euler")]
    pub n_euler: usize,
    /// Kernel bandwidth.
    #[serde(default = "lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub kernel: Kernel,
    /// Weight of a uniform density on the grid mixed into the kernel estimate.
    #[serde(default = "uniform_mix")]
    pub uniform_mix: f64,
    #[serde(default = "grid_points")]
    pub grid_points: usize,
    /// Half-width of the default grid in units of the pooled sample std; widened if a sample falls outside.
    #[serde(default = "grid_extent")]
    pub grid_extent: f64,
    /// Explicit `[lo, hi]`, overriding the data-driven grid.
    #[serde(default)]
    pub grid: Option<[f64; 2]>,
    #[serde(default = "density_floor")]
    pub density_floor: f64,
    /// β at or above which `𝒴` uses `x − ∂ log h(x)/β` instead of a grid search.
    #[serde(default = "beta_switch")]
    pub beta_switch: f64,
    /// `φ⁰(y) = phi0_quadratic · y²`.
    #[serde(default)]
    pub phi0_quadratic: f64,
    /// Use the unnormalised biweight `(1 − u²)²/λ` instead of unit mass.
    #[serde(default)]
    pub raw_kernel: bool,
    #[serde(default = "divergence_limit")]
    pub divergence_limit: f64,
    /// Weight of the new potential in `φ ← (1 − η) φ + η φ_new`.
    #[serde(default = "one")]
    pub relaxation: f64,
    /// Replace each new `φ` by `𝒯β−𝒯β+[φ]`, its largest β-semiconvex minorant.
    #[serde(default = "yes")]
    pub semiconvex_projection: bool,
    /// Which process the final Euler scheme integrates.
    #[serde(default)]
    pub route: SimulationRoute,
    #[serde(default)]
    pub seed: u64,
}

/// Kernel for the density of `𝒴_T(X_T)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−u²/2)/(λ√(2π))`, positive everywhere.
    #[default]
    Gaussian,
    /// `(1 − u²)² 𝟙{|u| < 1}`, zero beyond one bandwidth.
    Biweight,
}

/// Final simulation after the iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationRoute {
    /// `dX = α(t, X) dt + σ(t, X) dW` from `x_0`, with `Y_t = 𝒴_t(X_t)`.
    #[default]
    Controls,
    /// `dY = ∂ log h_t(Y) dt + dW` from `𝒴_0(x_0)`, with `X_t = Y_t + ∂ log h_t(Y_t)/β`.
    YProcess,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn iterations() -> usize {
    20
}
fn n_mc() -> usize {
    10_000
}
fn n_euler() -> usize {
    40
}
fn lambda() -> f64 {
    0.3
}
fn uniform_mix() -> f64 {
    1e-6
}
fn grid_points() -> usize {
    512
}
fn grid_extent() -> f64 {
    6.0
}
fn density_floor() -> f64 {
    1e-12
}
fn beta_switch() -> f64 {
    50.0
}
fn divergence_limit() -> f64 {
    1e6
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            horizon: one(),
            iterations: iterations(),
            n_mc: n_mc(),
            n_euler: n_euler(),
            lambda: lambda(),
            kernel: Kernel::default(),
            uniform_mix: uniform_mix(),
            grid_points: grid_points(),
            grid_extent: grid_extent(),
            grid: None,
            density_floor: density_floor(),
            beta_switch: beta_switch(),
            phi0_quadratic: 0.0,
            raw_kernel: false,
            divergence_limit: divergence_limit(),
            relaxation: 1.0,
            semiconvex_projection: true,
            route: SimulationRoute::default(),
            seed: 0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.beta) || !pos(self.horizon) || !pos(self.lambda) || !pos(self.density_floor) {
            return Err(Error::InvalidParameter(
                "beta, horizon, lambda and density_floor must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.uniform_mix) {
            return Err(Error::InvalidParameter("uniform_mix must lie in [0, 1)".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidParameter("relaxation must lie in (0, 1]".into()));
        }
        if self.n_mc == 0 || self.n_euler == 0 {
            return Err(Error::InvalidParameter("n_mc and n_euler must be at least 1".into()));
        }
        if self.grid_points < Grid1D::MIN_POINTS {
            return Err(Error::InvalidParameter(format!(
                "grid_points must be at least {}",
                Grid1D::MIN_POINTS
            )));
        }
        Ok(())
    }
}

/// Potentials after the last completed iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornState {
    /// `φ = log h_T`.
    pub phi: Grid1D,
    /// `log h_0` from the last Monte-Carlo step.
    pub log_h0: Grid1D,
    pub iteration: usize,
    pub config: SinkhornConfig,
}

/// Per-iteration diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub phi_sup_norm: f64,
    /// Mapped points whose argmin sat on the grid boundary.
    pub boundary_hits: usize,
    /// Grid points where the kernel estimate was exactly zero.
    pub uncovered_points: usize,
    /// Trapezoid mass of the kernel estimate.
    pub kde_mass: f64,
}

pub struct SinkhornRun {
    pub state: SinkhornState,
    pub trajectories: Vec<Trajectory>,
    pub history: Vec<IterationLog>,
    /// `(phi, log_h0)` after each iteration.
    pub dumps: Vec<(Grid1D, Grid1D)>,
}

impl SinkhornRun {
    pub fn terminal(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.x_last()[0]).collect()
    }
}

/// `log h_0(y) = log mean_i exp φ(y + z_i)` for the given draws `z_i ~ N(0, T)`.
pub fn conv_h0_with(phi: &Grid1D, z: &[f64]) -> Result<Grid1D> {
    if z.is_empty() {
        return Err(Error::InvalidParameter("need at least one Monte-Carlo draw".into()));
    }
    let ln_n = (z.len() as f64).ln();
    let mut terms = vec![0.0; z.len()];
    let values = (0..phi.n())
        .map(|i| {
            let y = phi.x(i);
            for (t, zi) in terms.iter_mut().zip(z) {
                *t = phi.interp(y + zi);
            }
            log_sum_exp(&terms) - ln_n
        })
        .collect();
    Ok(phi.with_values(values, GridKind::LogH))
}

/// Monte-Carlo `log h_0` with `n_mc` common draws across the grid.
pub fn conv_h0(phi: &Grid1D, horizon: f64, n_mc: usize, rng: &mut SbbRng) -> Result<Grid1D> {
    let sd = horizon.sqrt();
    let z: Vec<f64> = (0..n_mc).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    conv_h0_with(phi, &z)
}

/// `𝒯β−[ψ](y) = max_x [ψ(x) − β/2 (x − y)²]` over grid points.
pub fn sup_convolve(psi: &Grid1D, beta: f64) -> Grid1D {
    let xs = psi.points();
    let values = xs
        .iter()
        .map(|&y| {
            xs.iter()
                .zip(&psi.values)
                .map(|(&x, &v)| v - 0.5 * beta * (x - y) * (x - y))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    psi.with_values(values, psi.kind)
}

/// `𝒯β+[φ](x) = min_y [φ(y) + β/2 (x − y)²]` over grid points.
pub fn inf_convolve(phi: &Grid1D, beta: f64) -> Grid1D {
    let xs = phi.points();
    let values = xs
        .iter()
        .map(|&x| {
            xs.iter()
                .zip(&phi.values)
                .map(|(&y, &v)| v + 0.5 * beta * (x - y) * (x - y))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    phi.with_values(values, phi.kind)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArgminResult {
    pub y: f64,
    /// The minimizing grid point was an endpoint: the grid may be too small.
    pub at_boundary: bool,
    /// The large-β gradient shortcut was used.
    pub shortcut: bool,
}

/// `argmin_y [f(y) + β/2 (x − y)²]` for tabulated `f`.
pub fn argmin_map(target: &Grid1D, beta: f64, x: f64, beta_switch: f64) -> Result<ArgminResult> {
    let span = target.hi - target.lo;
    if !(x >= target.lo - span && x <= target.hi + span) {
        return Err(Error::InvalidParameter(format!(
            "argmin query {x} outside [{}, {}]",
            target.lo - span,
            target.hi + span
        )));
    }
    if beta >= beta_switch {
        return Ok(ArgminResult {
            y: x - target.deriv(x) / beta,
            at_boundary: false,
            shortcut: true,
        });
    }
    let n = target.n();
    let obj = |i: usize| {
        let y = target.x(i);
        target.values[i] + 0.5 * beta * (x - y) * (x - y)
    };
    let mut best = 0;
    let mut best_v = obj(0);
    for i in 1..n {
        let v = obj(i);
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    if best == 0 || best == n - 1 {
        return Ok(ArgminResult {
            y: target.x(best),
            at_boundary: true,
            shortcut: false,
        });
    }
    let (fm, f0, fp) = (obj(best - 1), best_v, obj(best + 1));
    let curv = fm - 2.0 * f0 + fp;
    let h = target.step();
    let offset = if curv > 0.0 { (0.5 * (fm - fp) / curv).clamp(-1.0, 1.0) * h } else { 0.0 };
    Ok(ArgminResult {
        y: target.x(best) + offset,
        at_boundary: false,
        shortcut: false,
    })
}

/// Biweight kernel of bandwidth `λ`; unit mass unless `raw`.
pub fn kernel(u: f64, lambda: f64, raw: bool) -> f64 {
    let s = u / lambda;
    if s.abs() >= 1.0 {
        return 0.0;
    }
    let b = (1.0 - s * s) * (1.0 - s * s) / lambda;
    if raw {
        b
    } else {
        b * 15.0 / 16.0
    }
}

/// Kernel density estimate of `samples` on the grid.
pub fn kde_numerator(grid: &Grid1D, samples: &[f64], lambda: f64, raw: bool) -> Grid1D {
    let mut values = vec![0.0; grid.n()];
    let h = grid.step();
    let m = samples.len().max(1) as f64;
    for &s in samples {
        // Only grid points within λ of the sample contribute.
        let lo = (((s - lambda - grid.lo) / h).floor().max(0.0)) as usize;
        let hi = (((s + lambda - grid.lo) / h).ceil().max(0.0) as usize).min(grid.n() - 1);
        for (i, v) in values.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *v += kernel(grid.x(i) - s, lambda, raw) / m;
        }
    }
    grid.with_values(values, GridKind::H)
}

/// Log of the kernel density estimate; `−∞` where a compact kernel has no mass.
pub fn log_kde(grid: &Grid1D, samples: &[f64], lambda: f64, kind: Kernel, raw: bool) -> Vec<f64> {
    match kind {
        Kernel::Biweight => kde_numerator(grid, samples, lambda, raw).values.iter().map(|v| v.ln()).collect(),
        Kernel::Gaussian => {
            let norm = -(samples.len().max(1) as f64 * lambda * (2.0 * PI).sqrt()).ln();
            let mut terms = vec![0.0; samples.len()];
            (0..grid.n())
                .map(|i| {
                    let y = grid.x(i);
                    for (t, &s) in terms.iter_mut().zip(samples) {
                        let u = (y - s) / lambda;
                        *t = -0.5 * u * u;
                    }
                    log_sum_exp(&terms) + norm
                })
                .collect()
        }
    }
}

/// `h_T` is defined up to a constant factor; shift so the largest value is zero.
fn pin_peak(mut v: Vec<f64>) -> Vec<f64> {
    let peak = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak.is_finite() {
        v.iter_mut().for_each(|x| *x -= peak);
    }
    v
}

/// `log E[N(y | y0_i, T) / h_0(y0_i)]` on the grid.
fn log_denominator(grid: &Grid1D, log_h0: &Grid1D, y0: &[f64], horizon: f64) -> Vec<f64> {
    let weights: Vec<f64> = y0.iter().map(|&y| -log_h0.interp(y)).collect();
    let norm = -0.5 * (2.0 * PI * horizon).ln() - (y0.len() as f64).ln();
    let mut terms = vec![0.0; y0.len()];
    (0..grid.n())
        .map(|i| {
            let y = grid.x(i);
            for ((t, &c), &w) in terms.iter_mut().zip(y0).zip(&weights) {
                *t = w - (y - c) * (y - c) / (2.0 * horizon);
            }
            log_sum_exp(&terms) + norm
        })
        .collect()
}

/// Step 4: the new `φ` from mapped source and target points.
pub fn update_h_terminal(
    phi: &Grid1D,
    log_h0: &Grid1D,
    y0: &[f64],
    y_terminal: &[f64],
    config: &SinkhornConfig,
) -> Result<(Grid1D, usize, f64)> {
    if y0.is_empty() || y_terminal.is_empty() {
        return Err(Error::Empty("mapped sample"));
    }
    let mut log_num = log_kde(phi, y_terminal, config.lambda, config.kernel, config.raw_kernel);
    if config.uniform_mix > 0.0 {
        let w = config.uniform_mix;
        let flat = (w / (phi.hi - phi.lo)).ln();
        for v in log_num.iter_mut() {
            *v = log_sum_exp(&[(1.0 - w).ln() + *v, flat]);
        }
    }
    let kde_mass = phi.with_values(log_num.iter().map(|v| v.exp()).collect(), GridKind::H).integral();
    let log_den = log_denominator(phi, log_h0, y0, config.horizon);
    let floor = config.density_floor.ln();
    let mut uncovered = 0;
    let raw: Vec<f64> = log_num
        .iter()
        .zip(&log_den)
        .map(|(&n, &ld)| {
            if n == f64::NEG_INFINITY {
                uncovered += 1;
                f64::NEG_INFINITY
            } else {
                n - ld
            }
        })
        .collect();
    if raw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("kernel density ratio"));
    }
    if uncovered == raw.len() {
        return Err(Error::Empty("kernel estimate support"));
    }
    if uncovered > 0 {
        log::debug!("kernel estimate is zero at {uncovered} grid points; clamped to the floor");
    }
    // Only a compact kernel leaves empty cells; a Gaussian estimate is used as is.
    let values = match config.kernel {
        Kernel::Biweight => pin_peak(raw).into_iter().map(|v| v.max(floor)).collect(),
        Kernel::Gaussian => pin_peak(raw),
    };
    Ok((phi.with_values(values, GridKind::Phi), uncovered, kde_mass))
}

fn pooled_grid(mu0: &[f64], mu_t: &[f64], config: &SinkhornConfig) -> (f64, f64) {
    if let Some([lo, hi]) = config.grid {
        return (lo, hi);
    }
    let all: Vec<f64> = mu0.iter().chain(mu_t).copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt().max(config.horizon.sqrt());
    let (min, max) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = config.lambda;
    ((mean - config.grid_extent * sd).min(min - pad), (mean + config.grid_extent * sd).max(max + pad))
}

fn map_all(target: &Grid1D, beta: f64, xs: &[f64], switch: f64) -> Result<(Vec<f64>, usize)> {
    let mut hits = 0;
    let ys = xs
        .iter()
        .map(|&x| {
            let r = argmin_map(target, beta, x, switch)?;
            hits += r.at_boundary as usize;
            Ok(r.y)
        })
        .collect::<Result<_>>()?;
    Ok((ys, hits))
}

/// Runs the iterations, then simulates one path per source point.
pub fn run_sinkhorn_sbb(mu0: &[f64], mu_t: &[f64], config: &SinkhornConfig) -> Result<SinkhornRun> {
    config.validate()?;
    if mu0.is_empty() || mu_t.is_empty() {
        return Err(Error::Empty("marginal sample"));
    }
    if mu0.iter().chain(mu_t).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("marginal sample"));
    }
    let (lo, hi) = pooled_grid(mu0, mu_t, config);
    let c = config.phi0_quadratic;
    let mut phi = Grid1D::from_fn(lo, hi, config.grid_points, GridKind::Phi, |y| c * y * y)?;
    let mut mc_rng = rng::stream(config.seed, rng::streams::INIT);
    let mut history = Vec::with_capacity(config.iterations);
    let mut dumps = Vec::with_capacity(config.iterations);
    let mut log_h0 = conv_h0(&phi, config.horizon, config.n_mc, &mut mc_rng)?;
    for k in 0..config.iterations {
        if k > 0 {
            log_h0 = conv_h0(&phi, config.horizon, config.n_mc, &mut mc_rng)?;
        }
        let (y0, hits0) = map_all(&log_h0, config.beta, mu0, config.beta_switch)?;
        let (yt, hits_t) = map_all(&phi, config.beta, mu_t, config.beta_switch)?;
        let (mut next, uncovered, kde_mass) = update_h_terminal(&phi, &log_h0, &y0, &yt, config)?;
        if config.relaxation < 1.0 {
            let eta = config.relaxation;
            let mixed = phi.values.iter().zip(&next.values).map(|(&old, &new)| (1.0 - eta) * old + eta * new);
            next = next.with_values(pin_peak(mixed.collect()), GridKind::Phi);
        }
        if config.semiconvex_projection {
            // φ = 𝒯β−[ψ] for some ψ, so it must be a fixed point of 𝒯β−𝒯β+.
            next = sup_convolve(&inf_convolve(&next, config.beta), config.beta);
        }
        let sup = next.sup_norm();
        if !sup.is_finite() || sup > config.divergence_limit {
            return Err(Error::SinkhornDiverged {
                iteration: k,
                limit: config.divergence_limit,
            });
        }
        if hits0 + hits_t > 0 {
            log::warn!("iteration {k}: {} argmins on the grid boundary", hits0 + hits_t);
        }
        history.push(IterationLog {
            iteration: k,
            phi_sup_norm: sup,
            boundary_hits: hits0 + hits_t,
            uncovered_points: uncovered,
            kde_mass,
        });
        dumps.push((next.clone(), log_h0.clone()));
        phi = next;
    }
    let state = SinkhornState {
        phi,
        log_h0,
        iteration: config.iterations,
        config: config.clone(),
    };
    let trajectories = simulate(&state, mu0)?;
    Ok(SinkhornRun {
        state,
        trajectories,
        history,
        dumps,
    })
}

/// `log h_t = log(h_T * N(0, T − t))` by quadrature over the grid.
pub fn log_h_at(phi: &Grid1D, horizon: f64, t: f64) -> Result<Grid1D> {
    if !(t >= 0.0 && t <= horizon) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let tau = horizon - t;
    if tau <= 0.0 {
        return Ok(phi.with_values(phi.values.clone(), GridKind::LogH));
    }
    let h = phi.step();
    let n = phi.n();
    let xs = phi.points();
    let log_w: Vec<f64> = (0..n)
        .map(|j| {
            let w = if j == 0 || j == n - 1 { 0.5 * h } else { h };
            phi.values[j] + w.ln()
        })
        .collect();
    let norm = -0.5 * (2.0 * PI * tau).ln();
    let mut terms = vec![0.0; n];
    let values = xs
        .iter()
        .map(|&y| {
            for ((t, &x), &lw) in terms.iter_mut().zip(&xs).zip(&log_w) {
                *t = lw - (y - x) * (y - x) / (2.0 * tau);
            }
            log_sum_exp(&terms) + norm
        })
        .collect();
    Ok(phi.with_values(values, GridKind::LogH))
}

/// Optimal controls recovered from a converged state.
#[derive(Clone, Debug)]
pub struct Controls {
    phi: Grid1D,
    beta: f64,
    horizon: f64,
    beta_switch: f64,
}

/// Controls at one fixed time.
#[derive(Clone, Debug)]
pub struct ControlSlice {
    pub t: f64,
    pub log_h: Grid1D,
    beta: f64,
    beta_switch: f64,
}

impl ControlSlice {
    /// `𝒴_t(x)`.
    pub fn y_of_x(&self, x: f64) -> Result<f64> {
        Ok(argmin_map(&self.log_h, self.beta, x, self.beta_switch)?.y)
    }

    pub fn alpha(&self, x: f64) -> Result<f64> {
        Ok(self.log_h.deriv(self.y_of_x(x)?))
    }

    pub fn sigma(&self, x: f64) -> Result<f64> {
        Ok(1.0 + self.log_h.deriv2(self.y_of_x(x)?) / self.beta)
    }
}

impl Controls {
    pub fn at(&self, t: f64) -> Result<ControlSlice> {
        Ok(ControlSlice {
            t,
            log_h: log_h_at(&self.phi, self.horizon, t)?,
            beta: self.beta,
            beta_switch: self.beta_switch,
        })
    }

    pub fn alpha(&self, t: f64, x: f64) -> Result<f64> {
        self.at(t)?.alpha(x)
    }

    pub fn sigma(&self, t: f64, x: f64) -> Result<f64> {
        self.at(t)?.sigma(x)
    }
}

pub fn extract_controls(state: &SinkhornState) -> Controls {
    Controls {
        phi: state.phi.clone(),
        beta: state.config.beta,
        horizon: state.config.horizon,
        beta_switch: state.config.beta_switch,
    }
}

fn time_grid(cfg: &SinkhornConfig) -> Vec<f64> {
    let n = cfg.n_euler;
    let end = cfg.horizon;
    let dt = end / n as f64;
    (0..=n).map(|k| if k == n { end } else { k as f64 * dt }).collect()
}

/// One path per source point along the configured route.
fn simulate(state: &SinkhornState, mu0: &[f64]) -> Result<Vec<Trajectory>> {
    match state.config.route {
        SimulationRoute::Controls => simulate_controls(state, mu0),
        SimulationRoute::YProcess => simulate_y(state, mu0),
    }
}

fn simulate_controls(state: &SinkhornState, mu0: &[f64]) -> Result<Vec<Trajectory>> {
    let cfg = &state.config;
    let times = time_grid(cfg);
    let controls = extract_controls(state);
    let slices = times.iter().map(|&t| controls.at(t)).collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(cfg.seed, rng::streams::SDE);
    let mut out = Vec::with_capacity(mu0.len());
    for &x0 in mu0 {
        let mut x = x0;
        let mut y_path = Vec::with_capacity(times.len());
        let mut x_path = Vec::with_capacity(times.len());
        for (k, slice) in slices.iter().enumerate() {
            let y = slice.y_of_x(x)?;
            y_path.push(y);
            x_path.push(x);
            if k + 1 == times.len() {
                break;
            }
            let dt = times[k + 1] - times[k];
            let alpha = slice.log_h.deriv(y);
            let sigma = 1.0 + slice.log_h.deriv2(y) / cfg.beta;
            let z: f64 = rng.sample(StandardNormal);
            x += alpha * dt + sigma * dt.sqrt() * z;
            if !x.is_finite() {
                return Err(Error::NonFiniteState { last_finite_step: k });
            }
        }
        out.push(Trajectory {
            dim: 1,
            times: times.clone(),
            y_path,
            x_path,
            seed: Some(cfg.seed),
        });
    }
    Ok(out)
}

fn simulate_y(state: &SinkhornState, mu0: &[f64]) -> Result<Vec<Trajectory>> {
    let cfg = &state.config;
    let times = time_grid(cfg);
    let slices = times
        .iter()
        .map(|&t| log_h_at(&state.phi, cfg.horizon, t))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(cfg.seed, rng::streams::SDE);
    let mut out = Vec::with_capacity(mu0.len());
    for &x0 in mu0 {
        let mut y = argmin_map(&slices[0], cfg.beta, x0, cfg.beta_switch)?.y;
        let mut y_path = Vec::with_capacity(times.len());
        let mut x_path = Vec::with_capacity(times.len());
        for (k, slice) in slices.iter().enumerate() {
            y_path.push(y);
            x_path.push(y + slice.deriv(y) / cfg.beta);
            if k + 1 == times.len() {
                break;
            }
            let dt = times[k + 1] - times[k];
            let z: f64 = rng.sample(StandardNormal);
            y += slice.deriv(y) * dt + dt.sqrt() * z;
            if !y.is_finite() {
                return Err(Error::NonFiniteState { last_finite_step: k });
            }
        }
        out.push(Trajectory {
            dim: 1,
            times: times.clone(),
            y_path,
            x_path,
            seed: Some(cfg.seed),
        });
    }
    Ok(out)
}

/// CSV `y, phi, h0, hT` for one iteration dump.
pub fn write_state_csv(phi: &Grid1D, log_h0: &Grid1D, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    w.write_record(["y", "phi", "h0", "hT"])?;
    for i in 0..phi.n() {
        let rec = [phi.x(i), phi.values[i], log_h0.values[i].exp(), phi.values[i].exp()];
        w.write_record(rec.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// CSV `t, x, alpha, sigma` on the given times and points.
pub fn write_controls_csv(controls: &Controls, times: &[f64], xs: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    w.write_record(["t", "x", "alpha", "sigma"])?;
    for &t in times {
        let slice = controls.at(t)?;
        for &x in xs {
            let rec = [t, x, slice.alpha(x)?, slice.sigma(x)?];
            w.write_record(rec.iter().map(|v| v.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
