//! Gaussian-mixture potential and the closed-form quantities built on it.
//!
//! The adjusted potential is `φ(x) = Σ_j α_j N(x | r_j, εΣ_j)` with diagonal
//! `Σ_j`. Two things follow analytically:
//!
//! * the endpoint coupling `π(x_T | x_0) ∝ exp(⟨x_0, x_T⟩/ε) φ(x_T)`, which
//!   is again a Gaussian mixture with means `r_j + Σ_j x_0`, covariances
//!   `εΣ_j` and weights `∝ α_j exp((⟨r_j, x_0⟩ + ½ x_0ᵀΣ_j x_0)/ε)`;
//! * the score drift `s(t, y) = ε∇_y log h_t(y)` where
//!   `h_t(y) = ∫ N(x | y, ε(T−t)) exp(|x|²/(2ε)) φ(x) dx`.
//!
//! Writing `A_j = t/(ε(T−t)) I + Σ_j⁻¹/ε` and
//! `c_j(y) = y/(ε(T−t)) + Σ_j⁻¹ r_j/ε`, the integral evaluates to
//!
//! ```text
//! log h_t(y) = −|y|²/(2ε(T−t)) + log Σ_j exp(u_j) + const,
//! u_j = log α_j − ½ log|Σ_j| − ½ log|A_j| − r_jᵀΣ_j⁻¹r_j/(2ε) + ½ c_jᵀA_j⁻¹c_j
//! ```
//!
//! so `s(t, y) = (Σ_j w_j A_j⁻¹c_j − y)/(T − t)` with `w = softmax(u)`.
//! Note the `+½ cᵀA⁻¹c`: the mixture term is an unnormalised Gaussian
//! integral, not a Gaussian density evaluated at `c`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::points::SampleBatch;
use crate::rng::{self, SbbRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialJson", into = "PotentialJson")]
pub struct GmmPotential {
    components: usize,
    dim: usize,
    epsilon: f64,
    horizon: f64,
    logits: Vec<f64>,
    /// `J × d`, row-major.
    r: Vec<f64>,
    /// `J × d`, row-major; `Σ_j = diag(exp(log_diag_sigma_j))`.
    log_diag_sigma: Vec<f64>,
}

/// On-disk form: `{J, d, epsilon, horizon, logits[], r[][], log_diag_sigma[][]}`.
#[derive(Serialize, Deserialize)]
struct PotentialJson {
    #[serde(rename = "J")]
    j: usize,
    d: usize,
    epsilon: f64,
    horizon: f64,
    logits: Vec<f64>,
    r: Vec<Vec<f64>>,
    log_diag_sigma: Vec<Vec<f64>>,
}

impl From<GmmPotential> for PotentialJson {
    fn from(p: GmmPotential) -> Self {
        let rows = |v: &[f64]| v.chunks(p.dim).map(<[f64]>::to_vec).collect();
        PotentialJson {
            j: p.components,
            d: p.dim,
            epsilon: p.epsilon,
            horizon: p.horizon,
            r: rows(&p.r),
            log_diag_sigma: rows(&p.log_diag_sigma),
            logits: p.logits,
        }
    }
}

impl TryFrom<PotentialJson> for GmmPotential {
    type Error = Error;

    fn try_from(j: PotentialJson) -> Result<Self> {
        let flatten = |rows: Vec<Vec<f64>>, what: &str| -> Result<Vec<f64>> {
            if rows.len() != j.j || rows.iter().any(|r| r.len() != j.d) {
                return Err(Error::InvalidParameter(format!("{what} must be a {}x{} matrix", j.j, j.d)));
            }
            Ok(rows.into_iter().flatten().collect())
        };
        let r = flatten(j.r, "r")?;
        let s = flatten(j.log_diag_sigma, "log_diag_sigma")?;
        GmmPotential::from_parts(j.d, j.epsilon, j.horizon, j.logits, r, s)
    }
}

/// Gradient of a scalar with respect to every potential parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialGrad {
    pub logits: Vec<f64>,
    pub r: Vec<f64>,
    pub log_diag_sigma: Vec<f64>,
}

impl PotentialGrad {
    pub fn zeros_like(p: &GmmPotential) -> Self {
        Self {
            logits: vec![0.0; p.logits.len()],
            r: vec![0.0; p.r.len()],
            log_diag_sigma: vec![0.0; p.log_diag_sigma.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.logits.iter_mut().chain(&mut self.r).chain(&mut self.log_diag_sigma) {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &PotentialGrad) {
        let pairs = [
            (&mut self.logits, &other.logits),
            (&mut self.r, &other.r),
            (&mut self.log_diag_sigma, &other.log_diag_sigma),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn slices(&self) -> [&[f64]; 3] {
        [&self.logits, &self.r, &self.log_diag_sigma]
    }
}

/// Per-component terms of the drift at one `(t, y)`; reused across queries.
#[derive(Clone, Debug, Default)]
pub struct DriftScratch {
    w: Vec<f64>,
    m: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Parameter-only terms: `e^{-l}/ε`, `r e^{-l}/ε`, and the per-component
    /// constant `log α − ½Σ l − ½Σ r² e^{-l}/ε`. Valid after [`GmmPotential::prepare`].
    scale: Vec<f64>,
    rscale: Vec<f64>,
    base: Vec<f64>,
}

/// Exact Gaussian-mixture form of `π(· | x_0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalCoupling {
    dim: usize,
    pub weights: Vec<f64>,
    /// `J × d` means `r_j + Σ_j x_0`.
    pub means: Vec<f64>,
    /// `J × d` diagonal covariances `εΣ_j`.
    pub variances: Vec<f64>,
}

impl ConditionalCoupling {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let terms: Vec<f64> = self
            .weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let mut lp = w.ln();
                for k in 0..d {
                    let v = self.variances[j * d + k];
                    let z = x[k] - self.means[j * d + k];
                    lp += -0.5 * z * z / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
                }
                lp
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn sample(&self, rng: &mut SbbRng) -> Vec<f64> {
        let d = self.dim;
        let j = sample_index(&self.weights, rng);
        (0..d)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                self.means[j * d + k] + self.variances[j * d + k].sqrt() * z
            })
            .collect()
    }
}

impl GmmPotential {
    pub fn from_parts(
        dim: usize,
        epsilon: f64,
        horizon: f64,
        logits: Vec<f64>,
        r: Vec<f64>,
        log_diag_sigma: Vec<f64>,
    ) -> Result<Self> {
        let components = logits.len();
        if components == 0 || dim == 0 {
            return Err(Error::InvalidParameter("need J >= 1 and d >= 1".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        for (v, what) in [(&r, "r"), (&log_diag_sigma, "log_diag_sigma")] {
            if v.len() != components * dim {
                return Err(Error::DimensionMismatch {
                    expected: components * dim,
                    got: v.len(),
                });
            }
            ensure_finite(v, what)?;
        }
        ensure_finite(&logits, "logits")?;
        Ok(Self {
            components,
            dim,
            epsilon,
            horizon,
            logits,
            r,
            log_diag_sigma,
        })
    }

    /// Zero logits, locations drawn from the target sample, `Σ_j = exp(init_log_sigma)·I`.
    pub fn init(
        components: usize,
        epsilon: f64,
        horizon: f64,
        target: &SampleBatch,
        init_log_sigma: f64,
        rng: &mut SbbRng,
    ) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::Empty("target sample"));
        }
        let d = target.dim();
        let mut r = Vec::with_capacity(components * d);
        for _ in 0..components {
            let i = rng.random_range(0..target.len());
            r.extend_from_slice(target.row(i));
        }
        Self::from_parts(
            d,
            epsilon,
            horizon,
            vec![0.0; components],
            r,
            vec![init_log_sigma; components * d],
        )
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn locations(&self) -> &[f64] {
        &self.r
    }

    pub fn log_diag_sigma(&self) -> &[f64] {
        &self.log_diag_sigma
    }

    /// Mixture weights `softmax(logits)`.
    pub fn alpha(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.logits, &mut self.r, &mut self.log_diag_sigma]
    }

    pub fn params(&self) -> [&[f64]; 3] {
        [&self.logits, &self.r, &self.log_diag_sigma]
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn check_query(&self, t: f64, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        if !(t >= 0.0 && t < self.horizon) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        ensure_finite(y, "drift query point")
    }

    /// Score drift `s(t, y)`; requires `0 ≤ t < T`.
    pub fn drift(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.check_query(t, y)?;
        let mut out = vec![0.0; self.dim];
        self.drift_into(t, y, &mut out, &mut DriftScratch::default());
        Ok(out)
    }

    /// Unchecked drift evaluation for hot loops.
    pub fn drift_into(&self, t: f64, y: &[f64], out: &mut [f64], scratch: &mut DriftScratch) {
        self.prepare(scratch);
        self.drift_prepared(t, y, out, scratch);
    }

    /// Fills the parameter-only terms of `scratch`; they stay valid until the
    /// parameters change.
    pub fn prepare(&self, s: &mut DriftScratch) {
        let (jn, d, eps) = (self.components, self.dim, self.epsilon);
        s.scale.resize(jn * d, 0.0);
        s.rscale.resize(jn * d, 0.0);
        s.base.resize(jn, 0.0);
        for j in 0..jn {
            let mut base = self.logits[j];
            for k in 0..d {
                let idx = j * d + k;
                let l = self.log_diag_sigma[idx];
                let scale = (-l).exp() / eps;
                let r = self.r[idx];
                s.scale[idx] = scale;
                s.rscale[idx] = r * scale;
                base -= 0.5 * l + 0.5 * r * r * scale;
            }
            s.base[j] = base;
        }
    }

    /// Drift using terms from a preceding [`prepare`](Self::prepare) on the same parameters.
    pub fn drift_prepared(&self, t: f64, y: &[f64], out: &mut [f64], scratch: &mut DriftScratch) {
        self.eval_terms(t, y, scratch);
        let tau = self.horizon - t;
        let d = self.dim;
        for k in 0..d {
            let mut acc = 0.0;
            for j in 0..self.components {
                acc += scratch.w[j] * scratch.m[j * d + k];
            }
            out[k] = (acc - y[k]) / tau;
        }
    }

    /// `log h_t(y)` up to a `y`-independent constant.
    pub fn log_h(&self, t: f64, y: &[f64]) -> Result<f64> {
        self.check_query(t, y)?;
        let tau = self.horizon - t;
        let us = self.log_weights_unnormalized(t, y);
        let yy: f64 = y.iter().map(|v| v * v).sum();
        Ok(-yy / (2.0 * self.epsilon * tau) + log_sum_exp(&us))
    }

    fn log_weights_unnormalized(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let (d, eps) = (self.dim, self.epsilon);
        let tau = self.horizon - t;
        let coef_t = t / (eps * tau);
        let coef_y = 1.0 / (eps * tau);
        (0..self.components)
            .map(|j| {
                let mut u = self.logits[j];
                for k in 0..d {
                    let l = self.log_diag_sigma[j * d + k];
                    let inv_s = (-l).exp();
                    let r = self.r[j * d + k];
                    let a = coef_t + inv_s / eps;
                    let c = y[k] * coef_y + r * inv_s / eps;
                    u += -0.5 * l - 0.5 * a.ln() - 0.5 * r * r * inv_s / eps + 0.5 * c * c / a;
                }
                u
            })
            .collect()
    }

    fn eval_terms(&self, t: f64, y: &[f64], s: &mut DriftScratch) {
        let (jn, d, eps) = (self.components, self.dim, self.epsilon);
        s.w.resize(jn, 0.0);
        s.m.resize(jn * d, 0.0);
        s.a.resize(jn * d, 0.0);
        let tau = self.horizon - t;
        let coef_t = t / (eps * tau);
        let coef_y = 1.0 / (eps * tau);
        let mut max_u = f64::NEG_INFINITY;
        for j in 0..jn {
            let mut u = s.base[j];
            let mut prod_a = 1.0;
            for k in 0..d {
                let idx = j * d + k;
                let a = coef_t + s.scale[idx];
                let c = y[k] * coef_y + s.rscale[idx];
                let m = c / a;
                u += 0.5 * c * m;
                prod_a *= a;
                s.a[idx] = a;
                s.m[idx] = m;
            }
            // One log per component; the product of d factors stays in range for moderate d.
            u -= if prod_a.is_normal() && prod_a < 1e300 {
                0.5 * prod_a.ln()
            } else {
                0.5 * s.a[j * d..(j + 1) * d].iter().map(|a| a.ln()).sum::<f64>()
            };
            s.w[j] = u;
            max_u = max_u.max(u);
        }
        let mut total = 0.0;
        for w in s.w.iter_mut() {
            *w = (*w - max_u).exp();
            total += *w;
        }
        for w in s.w.iter_mut() {
            *w /= total;
        }
    }

    /// Accumulates `Σ_k g_k ∂s_k(t, y)/∂θ` into `grad`, where `g = ∂L/∂s`.
    pub fn drift_vjp(&self, t: f64, y: &[f64], g: &[f64], grad: &mut PotentialGrad, scratch: &mut DriftScratch) {
        self.prepare(scratch);
        self.eval_terms(t, y, scratch);
        self.vjp_from_scratch(t, g, grad, scratch);
    }

    /// Same as [`drift_vjp`](Self::drift_vjp) but reuses the terms left in
    /// `scratch` by the immediately preceding drift evaluation at the same `(t, y)`.
    pub fn vjp_from_scratch(&self, t: f64, g: &[f64], grad: &mut PotentialGrad, scratch: &mut DriftScratch) {
        let (jn, d) = (self.components, self.dim);
        let tau = self.horizon - t;
        // b_j = ∂L/∂w_j, then through the softmax.
        let mut mean_b = 0.0;
        let mut b = std::mem::take(&mut scratch.b);
        b.resize(jn, 0.0);
        for j in 0..jn {
            let mut acc = 0.0;
            for k in 0..d {
                acc += g[k] * scratch.m[j * d + k];
            }
            b[j] = acc / tau;
            mean_b += scratch.w[j] * b[j];
        }
        for j in 0..jn {
            let w = scratch.w[j];
            let du = w * (b[j] - mean_b);
            grad.logits[j] += du;
            for k in 0..d {
                let idx = j * d + k;
                let (a, m, r) = (scratch.a[idx], scratch.m[idx], self.r[idx]);
                let dm = g[k] * w / tau;
                let diff = m - r;
                let scale = scratch.scale[idx];
                grad.r[idx] += du * diff * scale + dm * scale / a;
                grad.log_diag_sigma[idx] +=
                    du * (-0.5 + scale * (0.5 / a + 0.5 * diff * diff)) + dm * diff * scale / a;
            }
        }
        scratch.b = b;
    }

    pub fn conditional_coupling(&self, x0: &[f64]) -> Result<ConditionalCoupling> {
        if x0.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x0.len(),
            });
        }
        ensure_finite(x0, "coupling start point")?;
        let (jn, d, eps) = (self.components, self.dim, self.epsilon);
        let mut logw = self.logits.clone();
        let mut means = vec![0.0; jn * d];
        let mut variances = vec![0.0; jn * d];
        for j in 0..jn {
            for k in 0..d {
                let idx = j * d + k;
                let s = self.log_diag_sigma[idx].exp();
                let r = self.r[idx];
                logw[j] += (r * x0[k] + 0.5 * s * x0[k] * x0[k]) / eps;
                means[idx] = r + s * x0[k];
                variances[idx] = eps * s;
            }
        }
        Ok(ConditionalCoupling {
            dim: d,
            weights: softmax(&logw),
            means,
            variances,
        })
    }

    pub fn sample_conditional(&self, x0: &[f64], seed: u64) -> Result<Vec<f64>> {
        self.sample_conditional_with(x0, &mut rng::seeded(seed))
    }

    pub fn sample_conditional_with(&self, x0: &[f64], rng: &mut SbbRng) -> Result<Vec<f64>> {
        Ok(self.conditional_coupling(x0)?.sample(rng))
    }

    /// `𝒳_t(y) = y + s(t, y)/β`.
    pub fn forward_map(&self, beta: f64, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        let s = self.drift(t, y)?;
        Ok(y.iter().zip(&s).map(|(y, s)| y + s / beta).collect())
    }

    /// Terminal recovery `x_T ≈ 𝒳_{T̃}(y_T)`; the drift is singular at `T`.
    pub fn recover_x(&self, beta: f64, y_terminal: &[f64], t_tilde: f64) -> Result<Vec<f64>> {
        if t_tilde >= self.horizon {
            return Err(Error::TimeOutOfRange {
                t: t_tilde,
                horizon: self.horizon,
            });
        }
        self.forward_map(beta, t_tilde, y_terminal)
    }
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn sample_index(weights: &[f64], rng: &mut SbbRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(d: usize) -> GmmPotential {
        GmmPotential::from_parts(d, 1.0, 1.0, vec![0.0], vec![0.0; d], vec![0.0; d]).unwrap()
    }

    #[test]
    fn drift_vanishes_at_origin_for_centered_component() {
        let p = simple(2);
        assert_eq!(p.drift(0.5, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn drift_rejects_terminal_time_and_nan() {
        let p = simple(1);
        assert!(matches!(p.drift(1.0, &[0.0]), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(p.drift(0.2, &[f64::NAN]), Err(Error::NonFinite(_))));
        assert!(p.drift(0.2, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn flat_potential_gives_zero_drift() {
        // φ(x) ∝ exp(-|x|²/(2ε)) cancels the exp(|x|²/(2ε)) factor, so h_t is constant.
        let p = simple(1);
        for &y in &[-3.0, 0.4, 2.5] {
            let s = p.drift(0.3, &[y]).unwrap()[0];
            assert!(s.abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn coupling_at_origin_is_the_potential() {
        let p = GmmPotential::from_parts(1, 0.7, 1.0, vec![0.3, -1.0], vec![1.0, -2.0], vec![0.1, -0.4]).unwrap();
        let c = p.conditional_coupling(&[0.0]).unwrap();
        assert_eq!(c.weights, p.alpha());
        assert_eq!(c.means, vec![1.0, -2.0]);
        assert_eq!(c.variances, vec![0.7 * 0.1f64.exp(), 0.7 * (-0.4f64).exp()]);
    }

    #[test]
    fn forward_map_limits() {
        let p = GmmPotential::from_parts(2, 1.0, 1.0, vec![0.0, 1.0], vec![1.0, 2.0, -1.0, 0.5], vec![0.2; 4]).unwrap();
        let y = [0.3, -0.8];
        let big = p.forward_map(1e12, 0.4, &y).unwrap();
        for k in 0..2 {
            assert!((big[k] - y[k]).abs() <= 1e-9 * y[k].abs());
        }
        let s = p.drift(0.4, &y).unwrap();
        let f = p.forward_map(10.0, 0.4, &y).unwrap();
        for k in 0..2 {
            assert_eq!(f[k], y[k] + s[k] / 10.0);
        }
        assert!(p.forward_map(0.0, 0.4, &y).is_err());
        assert!(p.forward_map(-1.0, 0.4, &y).is_err());
        assert_eq!(simple(1).forward_map(3.0, 0.2, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn recover_x_uses_t_tilde() {
        let p = GmmPotential::from_parts(1, 1.0, 1.0, vec![0.0], vec![2.0], vec![-1.0]).unwrap();
        assert!(p.recover_x(10.0, &[0.5], 1.0).is_err());
        assert_eq!(p.recover_x(10.0, &[0.5], 0.99).unwrap(), p.forward_map(10.0, 0.99, &[0.5]).unwrap());
        assert_eq!(p.recover_x(f64::INFINITY, &[0.5], 0.99).unwrap(), vec![0.5]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = GmmPotential::from_parts(
            2,
            0.1 + 0.2,
            1.0,
            vec![1.0 / 3.0, -2.5e-17],
            vec![1e300, -0.1, std::f64::consts::E, 5e-324],
            vec![0.0, -0.0, 1.5, -7.25],
        )
        .unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"J\":2"));
        let back: GmmPotential = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn json_rejects_bad_shapes() {
        let bad = r#"{"J":2,"d":1,"epsilon":1.0,"horizon":1.0,"logits":[0,0],"r":[[0]],"log_diag_sigma":[[0],[0]]}"#;
        assert!(serde_json::from_str::<GmmPotential>(bad).is_err());
        let neg = r#"{"J":1,"d":1,"epsilon":-1.0,"horizon":1.0,"logits":[0],"r":[[0]],"log_diag_sigma":[[0]]}"#;
        assert!(serde_json::from_str::<GmmPotential>(neg).is_err());
    }

    #[test]
    fn log_space_is_finite_for_large_inputs() {
        let p = GmmPotential::from_parts(2, 1.0, 1.0, vec![0.0, 0.0], vec![3.0, -3.0, 1.0, 1.0], vec![1.0, -2.0, 0.0, 0.5]).unwrap();
        for &t in &[0.0, 0.5, 0.99] {
            for &y in &[1e6, -1e6] {
                let s = p.drift(t, &[y, -y]).unwrap();
                assert!(s.iter().all(|v| v.is_finite()), "t={t} y={y} -> {s:?}");
                assert!(p.log_h(t, &[y, -y]).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = GmmPotential::from_parts(2, 1.0, 1.0, vec![0.0, 0.5], vec![1.0, 2.0, -1.0, 0.5], vec![0.2; 4]).unwrap();
        let a = p.sample_conditional(&[0.3, 0.1], 42).unwrap();
        let b = p.sample_conditional(&[0.3, 0.1], 42).unwrap();
        assert_eq!(a, b);
    }
}
