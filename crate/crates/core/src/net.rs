//! Time-conditioned MLP approximating the inverse transport map.
//!
//! `z(t, x) = x + head([t_embed(t/T), x_embed(x)])`, each block being
//! linear → layer norm → GELU → linear. The last linear layer of `head` starts
//! at zero and the residual branch is switched off until the first update, so
//! a fresh net is exactly the identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::SbbRng;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn uniform(in_dim: usize, out_dim: usize, rng: &mut SbbRng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            out[o] = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn backward(&self, x: &[f64], dout: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..self.out_dim {
            let g = dout[o];
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }
}

/// linear → layer norm → GELU → linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub lin1: Linear,
    pub norm: LayerNorm,
    pub lin2: Linear,
}

#[derive(Clone, Debug, Default)]
struct BlockCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    rstd: f64,
    normed: Vec<f64>,
    /// Standard normal CDF at `normed`, reused by the GELU derivative.
    cdf: Vec<f64>,
    act: Vec<f64>,
    out: Vec<f64>,
    dact: Vec<f64>,
    dxhat: Vec<f64>,
    dpre: Vec<f64>,
}

impl FeedForward {
    fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut SbbRng) -> Self {
        Self {
            lin1: Linear::uniform(in_dim, hidden, rng),
            norm: LayerNorm::new(hidden),
            lin2: Linear::uniform(hidden, out_dim, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            lin1: Linear::zeros(self.lin1.in_dim, self.lin1.out_dim),
            norm: LayerNorm {
                dim: self.norm.dim,
                gamma: vec![0.0; self.norm.dim],
                beta: vec![0.0; self.norm.dim],
            },
            lin2: Linear::zeros(self.lin2.in_dim, self.lin2.out_dim),
        }
    }

    fn forward(&self, x: &[f64], c: &mut BlockCache) {
        let h = self.lin1.out_dim;
        c.input.clear();
        c.input.extend_from_slice(x);
        c.xhat.resize(h, 0.0);
        c.normed.resize(h, 0.0);
        c.cdf.resize(h, 0.0);
        c.act.resize(h, 0.0);
        c.out.resize(self.lin2.out_dim, 0.0);
        self.lin1.forward(x, &mut c.xhat);
        let mean = c.xhat.iter().sum::<f64>() / h as f64;
        let var = c.xhat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        c.rstd = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..h {
            c.xhat[i] = (c.xhat[i] - mean) * c.rstd;
            c.normed[i] = self.norm.gamma[i] * c.xhat[i] + self.norm.beta[i];
            c.cdf[i] = normal_cdf(c.normed[i]);
            c.act[i] = c.normed[i] * c.cdf[i];
        }
        self.lin2.forward(&c.act, &mut c.out);
    }

    /// Accumulates parameter gradients into `grad` and writes `∂L/∂input` to `dx`.
    fn backward(&self, c: &mut BlockCache, dout: &[f64], grad: &mut FeedForward, dx: &mut [f64]) {
        let h = self.lin1.out_dim;
        c.dact.resize(h, 0.0);
        c.dxhat.resize(h, 0.0);
        c.dpre.resize(h, 0.0);
        self.lin2.backward(&c.act, dout, &mut grad.lin2, &mut c.dact);
        for i in 0..h {
            let dn = c.dact[i] * gelu_grad(c.normed[i], c.cdf[i]);
            grad.norm.gamma[i] += dn * c.xhat[i];
            grad.norm.beta[i] += dn;
            c.dxhat[i] = dn * self.norm.gamma[i];
        }
        let hn = h as f64;
        let mean_d = c.dxhat.iter().sum::<f64>() / hn;
        let mean_dx = c.dxhat.iter().zip(&c.xhat).map(|(a, b)| a * b).sum::<f64>() / hn;
        for i in 0..h {
            c.dpre[i] = c.rstd * (c.dxhat[i] - mean_d - c.xhat[i] * mean_dx);
        }
        self.lin1.backward(&c.input, &c.dpre, &mut grad.lin1, dx);
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.lin1.weight,
            &self.lin1.bias,
            &self.norm.gamma,
            &self.norm.beta,
            &self.lin2.weight,
            &self.lin2.bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.lin1.weight,
            &mut self.lin1.bias,
            &mut self.norm.gamma,
            &mut self.norm.beta,
            &mut self.lin2.weight,
            &mut self.lin2.bias,
        ]
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Derivative of the exact GELU `x Φ(x)`, given `cdf = Φ(x)`.
fn gelu_grad(x: f64, cdf: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportNet {
    pub dim: usize,
    pub t_model: usize,
    pub d_model: usize,
    pub horizon: f64,
    pub t_embed: FeedForward,
    pub x_embed: FeedForward,
    pub head: FeedForward,
    /// False until the first parameter update; while false `z_forward` is the identity.
    pub residual_active: bool,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct NetCache {
    t_in: [f64; 1],
    t_cache: BlockCache,
    x_cache: BlockCache,
    head_in: Vec<f64>,
    head_cache: BlockCache,
    dhead_in: Vec<f64>,
    dx: Vec<f64>,
}

/// One supervised pair for the inverse-map regression: `z(time, mapped) ≈ target`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZPair {
    pub time: f64,
    pub mapped: Vec<f64>,
    pub target: Vec<f64>,
}

/// Endpoint-only regression batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ZRegressionBatch {
    pub pairs: Vec<ZPair>,
}

impl TransportNet {
    pub fn new(dim: usize, t_model: usize, d_model: usize, horizon: f64, rng: &mut SbbRng) -> Result<Self> {
        if dim == 0 || t_model == 0 || d_model == 0 {
            return Err(Error::InvalidParameter("network widths must be positive".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        let t_embed = FeedForward::new(1, t_model, t_model, rng);
        let x_embed = FeedForward::new(dim, d_model, d_model, rng);
        let mut head = FeedForward::new(t_model + d_model, d_model, dim, rng);
        head.lin2 = Linear::zeros(d_model, dim);
        Ok(Self {
            dim,
            t_model,
            d_model,
            horizon,
            t_embed,
            x_embed,
            head,
            residual_active: false,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            t_embed: self.t_embed.zeros_like(),
            x_embed: self.x_embed.zeros_like(),
            head: self.head.zeros_like(),
            ..self.clone()
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(18);
        v.extend(self.t_embed.tensors());
        v.extend(self.x_embed.tensors());
        v.extend(self.head.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::with_capacity(18);
        v.extend(self.t_embed.tensors_mut());
        v.extend(self.x_embed.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Marks the residual branch live; called by the optimizer on first update.
    pub fn activate(&mut self) {
        self.residual_active = true;
    }

    pub fn z_forward(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        ensure_finite(x, "transport net input")?;
        if !t.is_finite() {
            return Err(Error::NonFinite("transport net time"));
        }
        if !self.residual_active {
            return Ok(x.to_vec());
        }
        let mut out = vec![0.0; self.dim];
        self.forward_full(t, x, &mut NetCache::default(), &mut out);
        Ok(out)
    }

    /// Always evaluates the residual branch (used for training).
    pub fn forward_full(&self, t: f64, x: &[f64], cache: &mut NetCache, out: &mut [f64]) {
        cache.t_in[0] = t / self.horizon;
        self.t_embed.forward(&cache.t_in, &mut cache.t_cache);
        self.x_embed.forward(x, &mut cache.x_cache);
        cache.head_in.clear();
        cache.head_in.extend_from_slice(&cache.t_cache.out);
        cache.head_in.extend_from_slice(&cache.x_cache.out);
        self.head.forward(&cache.head_in, &mut cache.head_cache);
        for k in 0..self.dim {
            out[k] = x[k] + cache.head_cache.out[k];
        }
    }

    /// Backpropagates `dout = ∂L/∂z` through the pass recorded in `cache`.
    pub fn backward(&self, cache: &mut NetCache, dout: &[f64], grad: &mut TransportNet) {
        cache.dhead_in.resize(self.t_model + self.d_model, 0.0);
        cache.dx.resize(self.dim, 0.0);
        self.head
            .backward(&mut cache.head_cache, dout, &mut grad.head, &mut cache.dhead_in);
        let mut dt = [0.0];
        let (dh_t, dh_x) = cache.dhead_in.split_at(self.t_model);
        self.t_embed.backward(&mut cache.t_cache, dh_t, &mut grad.t_embed, &mut dt);
        self.x_embed.backward(&mut cache.x_cache, dh_x, &mut grad.x_embed, &mut cache.dx);
    }

    /// Mean squared residual over the batch, and its gradient.
    pub fn z_loss(&self, batch: &ZRegressionBatch) -> Result<(f64, TransportNet)> {
        if batch.pairs.is_empty() {
            return Err(Error::Empty("transport regression batch"));
        }
        let n = batch.pairs.len() as f64;
        let mut grad = self.zeros_like();
        let mut cache = NetCache::default();
        let mut out = vec![0.0; self.dim];
        let mut dout = vec![0.0; self.dim];
        let mut loss = 0.0;
        for p in &batch.pairs {
            if p.mapped.len() != self.dim || p.target.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: p.mapped.len().min(p.target.len()),
                });
            }
            self.forward_full(p.time, &p.mapped, &mut cache, &mut out);
            for k in 0..self.dim {
                let r = out[k] - p.target[k];
                loss += r * r;
                dout[k] = 2.0 * r / n;
            }
            self.backward(&mut cache, &dout, &mut grad);
        }
        Ok((loss / n, grad))
    }
}
