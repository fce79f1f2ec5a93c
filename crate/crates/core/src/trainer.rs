//! Alternating training of the drift potential `θ` and the inverse map `𝒵_θ̃`.
//!
//! Each outer iteration maps the raw endpoints into `Y` coordinates with the
//! current map, fits `θ` by bridge matching on those endpoints, then fits the
//! network so that `𝒵(0, 𝒳_0(x_0)) ≈ x_0` and `𝒵(T, 𝒳_T(x_T)) ≈ x_T` with
//! `𝒳_t(x) = x + s_θ(t, x)/β`. The β-large variant skips the network and uses
//! `𝒴_t(x) ≈ x − s_θ(t, x)/β` directly.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gmm::{DriftScratch, GmmPotential, PotentialGrad};
use crate::model::SbbModel;
use crate::net::{TransportNet, ZPair, ZRegressionBatch};
use crate::optim::Adam;
use crate::points::SampleBatch;
use crate::rng::{self, streams, SbbRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    BetaLarge,
}

/// How the β-large variant maps endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaLargeMap {
    /// `y = x − s(t, x)/β`.
    #[default]
    Score,
    /// `y = x − log(s(t, x))/β` taken literally, coordinate-wise. Fails
    /// whenever a drift coordinate is not positive.
    LogScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbbConfig {
    /// Volatility penalty; `None` is β = ∞ (plain bridge matching, identity maps).
    #[serde(with = "beta_serde")]
    pub beta: Option<f64>,
    pub epsilon: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
    #[serde(default = "defaults::t_tilde")]
    pub t_tilde: f64,
    /// Upper end of the uniform bridge-time distribution; defaults to `t_tilde`.
    #[serde(default)]
    pub bridge_t_max: Option<f64>,
    #[serde(default = "defaults::outer_iterations")]
    pub outer_iterations: usize,
    #[serde(default = "defaults::components")]
    pub components: usize,
    #[serde(default = "defaults::n_epoch")]
    pub n_epoch: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Share of each outer iteration's step budget spent on `θ`.
    #[serde(default = "defaults::theta_fraction")]
    pub theta_fraction: f64,
    #[serde(default = "defaults::t_model")]
    pub t_model: usize,
    #[serde(default = "defaults::d_model")]
    pub d_model: usize,
    #[serde(default)]
    pub init_log_sigma: f64,
    #[serde(default = "defaults::early_stop_window")]
    pub early_stop_window: usize,
    #[serde(default = "defaults::early_stop_tol")]
    pub early_stop_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub beta_large_map: BetaLargeMap,
}

mod defaults {
    pub fn horizon() -> f64 {
        1.0
    }
    pub fn t_tilde() -> f64 {
        0.99
    }
    pub fn outer_iterations() -> usize {
        5
    }
    pub fn components() -> usize {
        50
    }
    pub fn n_epoch() -> usize {
        15000
    }
    pub fn batch_size() -> usize {
        512
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn theta_fraction() -> f64 {
        0.8
    }
    pub fn t_model() -> usize {
        8
    }
    pub fn d_model() -> usize {
        32
    }
    pub fn early_stop_window() -> usize {
        200
    }
    pub fn early_stop_tol() -> f64 {
        1e-6
    }
}

/// β as a number, or the string `"inf"` (also `null` in JSON) for β = ∞.
pub(crate) mod beta_serde {
    use super::*;

    pub fn serialize<S: Serializer>(beta: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match beta {
            Some(b) => s.serialize_f64(*b),
            None => s.serialize_str("inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
        Null(()),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(b) if b.is_infinite() && b > 0.0 => Ok(None),
            Raw::Num(b) => Ok(Some(b)),
            Raw::Str(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "∞") => Ok(None),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("beta must be a number or \"inf\", got \"{s}\""))),
            Raw::Null(()) => Ok(None),
        }
    }

    /// An optional β: `null` is "no value", and β = ∞ must be spelled `"inf"`.
    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(beta: &Option<Option<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
            match beta {
                Some(b) => super::serialize(b, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Option<f64>>, D::Error> {
            match Raw::deserialize(d)? {
                Raw::Null(()) => Ok(None),
                Raw::Num(b) if b.is_infinite() && b > 0.0 => Ok(Some(None)),
                Raw::Num(b) => Ok(Some(Some(b))),
                Raw::Str(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "∞") => Ok(Some(None)),
                Raw::Str(s) => Err(serde::de::Error::custom(format!("beta must be a number or \"inf\", got \"{s}\""))),
            }
        }
    }
}

impl Default for SbbConfig {
    fn default() -> Self {
        Self {
            beta: Some(10.0),
            epsilon: 1.0,
            horizon: defaults::horizon(),
            t_tilde: defaults::t_tilde(),
            bridge_t_max: None,
            outer_iterations: defaults::outer_iterations(),
            components: defaults::components(),
            n_epoch: defaults::n_epoch(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            theta_fraction: defaults::theta_fraction(),
            t_model: defaults::t_model(),
            d_model: defaults::d_model(),
            init_log_sigma: 0.0,
            early_stop_window: defaults::early_stop_window(),
            early_stop_tol: defaults::early_stop_tol(),
            seed: 0,
            variant: Variant::Full,
            beta_large_map: BetaLargeMap::Score,
        }
    }
}

impl SbbConfig {
    /// Checks hard constraints and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if let Some(b) = self.beta {
            if !pos(b) {
                return bad(format!("beta must be positive, got {b}"));
            }
        }
        if !pos(self.epsilon) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !pos(self.horizon) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.t_tilde > 0.0 && self.t_tilde < self.horizon) {
            return bad(format!("t_tilde must lie in (0, {}), got {}", self.horizon, self.t_tilde));
        }
        let t_max = self.bridge_t_max();
        if !(t_max > 0.0 && t_max < self.horizon) {
            return bad(format!("bridge_t_max must lie in (0, {}), got {t_max}", self.horizon));
        }
        if self.outer_iterations == 0 || self.components == 0 || self.batch_size == 0 {
            return bad("outer_iterations, components and batch_size must be at least 1".into());
        }
        if self.n_epoch < self.outer_iterations {
            return bad(format!("n_epoch {} is smaller than outer_iterations", self.n_epoch));
        }
        if !pos(self.lr) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.theta_fraction > 0.0 && self.theta_fraction <= 1.0) {
            return bad(format!("theta_fraction must lie in (0, 1], got {}", self.theta_fraction));
        }
        if self.t_model == 0 || self.d_model == 0 {
            return bad("t_model and d_model must be at least 1".into());
        }
        if !self.init_log_sigma.is_finite() || !self.early_stop_tol.is_finite() {
            return bad("init_log_sigma and early_stop_tol must be finite".into());
        }
        let mut warnings = Vec::new();
        if let Some(b) = self.beta {
            if b <= 1.0 / self.horizon {
                warnings.push(format!(
                    "beta = {b} <= 1/T = {}: the dual problem need not attain its supremum",
                    1.0 / self.horizon
                ));
            }
        }
        Ok(warnings)
    }

    pub fn bridge_t_max(&self) -> f64 {
        self.bridge_t_max.unwrap_or(self.t_tilde)
    }

    /// Gradient steps per outer iteration for `(θ, θ̃)`. With β = ∞ there is
    /// no map to fit and the whole budget goes to `θ`.
    pub fn step_budget(&self) -> (usize, usize) {
        let per_iter = (self.n_epoch / self.outer_iterations.max(1)).max(1);
        if self.beta.is_none() || self.variant == Variant::BetaLarge {
            return (per_iter, 0);
        }
        let theta = ((per_iter as f64 * self.theta_fraction).round() as usize).clamp(1, per_iter);
        (theta, per_iter - theta)
    }

    pub fn hash(&self) -> String {
        crate::experiment::config_hash(self)
    }
}

/// One Brownian-bridge draw between fixed endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSample {
    pub y0: Vec<f64>,
    pub y_terminal: Vec<f64>,
    pub t: f64,
    pub yt: Vec<f64>,
    /// `(y_T − y_t)/(T − t)`.
    pub target: Vec<f64>,
}

/// Bridge point at a given time and standard normal draw `z`.
pub fn bridge_at(y0: &[f64], y_terminal: &[f64], t: f64, horizon: f64, epsilon: f64, z: &[f64]) -> Result<BridgeSample> {
    if y0.len() != y_terminal.len() || z.len() != y0.len() {
        return Err(Error::DimensionMismatch {
            expected: y0.len(),
            got: y_terminal.len().max(z.len()),
        });
    }
    crate::error::ensure_finite(y0, "bridge start")?;
    crate::error::ensure_finite(y_terminal, "bridge end")?;
    if !(t >= 0.0 && t < horizon) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let tau = horizon - t;
    let sd = (epsilon * t * tau / horizon).sqrt();
    let yt: Vec<f64> = (0..y0.len())
        .map(|k| (tau / horizon) * y0[k] + (t / horizon) * y_terminal[k] + sd * z[k])
        .collect();
    let target = y_terminal.iter().zip(&yt).map(|(b, y)| (b - y) / tau).collect();
    Ok(BridgeSample {
        y0: y0.to_vec(),
        y_terminal: y_terminal.to_vec(),
        t,
        yt,
        target,
    })
}

/// Draws `t ~ U[0, t_max)` and a bridge point between `y0` and `y_terminal`.
pub fn sample_bridge(
    y0: &[f64],
    y_terminal: &[f64],
    horizon: f64,
    epsilon: f64,
    t_max: f64,
    rng: &mut SbbRng,
) -> Result<BridgeSample> {
    let t = rng.random::<f64>() * t_max.min(horizon);
    let z: Vec<f64> = (0..y0.len()).map(|_| rng.sample(StandardNormal)).collect();
    bridge_at(y0, y_terminal, t, horizon, epsilon, &z)
}

/// Flat storage for a training batch of bridge points.
#[derive(Clone, Debug, Default)]
pub struct BridgeBatch {
    dim: usize,
    t: Vec<f64>,
    yt: Vec<f64>,
    target: Vec<f64>,
}

impl BridgeBatch {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn from_samples(samples: &[BridgeSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("bridge batch"))?;
        let mut b = Self::new(first.yt.len());
        for s in samples {
            if s.yt.len() != b.dim || s.target.len() != b.dim {
                return Err(Error::DimensionMismatch {
                    expected: b.dim,
                    got: s.yt.len(),
                });
            }
            b.push(s.t, &s.yt, &s.target);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn clear(&mut self) {
        self.t.clear();
        self.yt.clear();
        self.target.clear();
    }

    pub fn push(&mut self, t: f64, yt: &[f64], target: &[f64]) {
        self.t.push(t);
        self.yt.extend_from_slice(yt);
        self.target.extend_from_slice(target);
    }

    /// Draws one bridge point between `y0` and `yT` into the batch without
    /// allocating. Consumes the generator exactly like [`sample_bridge`].
    fn push_sampled(&mut self, y0: &[f64], y_terminal: &[f64], horizon: f64, epsilon: f64, t_max: f64, rng: &mut SbbRng) {
        let t = rng.random::<f64>() * t_max.min(horizon);
        let tau = horizon - t;
        let sd = (epsilon * t * tau / horizon).sqrt();
        self.t.push(t);
        for k in 0..self.dim {
            let z: f64 = rng.sample(StandardNormal);
            let yt = (tau / horizon) * y0[k] + (t / horizon) * y_terminal[k] + sd * z;
            self.yt.push(yt);
            self.target.push((y_terminal[k] - yt) / tau);
        }
    }
}

/// Mean of `‖s_θ(t, y_t) − target‖²` over the batch and its gradient in `θ`.
pub fn dsm_loss(potential: &GmmPotential, batch: &BridgeBatch) -> Result<(f64, PotentialGrad)> {
    if batch.is_empty() {
        return Err(Error::Empty("bridge batch"));
    }
    if batch.dim != potential.dim() {
        return Err(Error::DimensionMismatch {
            expected: potential.dim(),
            got: batch.dim,
        });
    }
    if let Some(&t) = batch.t.iter().find(|&&t| !(t >= 0.0 && t < potential.horizon())) {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: potential.horizon(),
        });
    }
    Ok(dsm_loss_unchecked(potential, batch, &mut DriftScratch::default()))
}

fn dsm_loss_unchecked(potential: &GmmPotential, batch: &BridgeBatch, scratch: &mut DriftScratch) -> (f64, PotentialGrad) {
    let d = batch.dim;
    let n = batch.len() as f64;
    let mut grad = PotentialGrad::zeros_like(potential);
    let mut s = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut loss = 0.0;
    potential.prepare(scratch);
    for i in 0..batch.len() {
        let t = batch.t[i];
        let y = &batch.yt[i * d..(i + 1) * d];
        let target = &batch.target[i * d..(i + 1) * d];
        potential.drift_prepared(t, y, &mut s, scratch);
        for k in 0..d {
            let r = s[k] - target[k];
            loss += r * r;
            g[k] = 2.0 * r / n;
        }
        potential.vjp_from_scratch(t, &g, &mut grad, scratch);
    }
    (loss / n, grad)
}

/// Loss curves of one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub dsm_losses: Vec<f64>,
    pub transport_losses: Vec<f64>,
    /// Step at which the transport fit stopped early, if it did.
    pub transport_stopped_at: Option<usize>,
    /// Mean `‖𝒵(0, 𝒳_0(x_0)) − x_0‖` over the source sample after the iteration.
    pub map_consistency: Option<f64>,
    /// Grid points where the 1D forward map failed to increase.
    pub monotonicity_violations: Option<usize>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: SbbConfig,
    pub config_hash: String,
    pub iterations: Vec<IterationReport>,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    fn new(config: &SbbConfig, warnings: Vec<String>) -> Self {
        Self {
            config: config.clone(),
            config_hash: config.hash(),
            iterations: Vec::new(),
            warnings,
            wall_clock_seconds: 0.0,
        }
    }

    /// Every recorded loss, in order.
    pub fn all_losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.iterations
            .iter()
            .flat_map(|it| it.dsm_losses.iter().chain(&it.transport_losses).copied())
    }

    pub fn first_dsm_loss(&self) -> Option<f64> {
        self.iterations.first().and_then(|it| it.dsm_losses.first().copied())
    }

    pub fn last_dsm_loss(&self) -> Option<f64> {
        self.iterations.last().and_then(|it| it.dsm_losses.last().copied())
    }
}

/// State handed to an observer after each outer iteration.
pub struct Checkpoint<'a> {
    pub iteration: usize,
    pub potential: &'a GmmPotential,
    pub net: Option<&'a TransportNet>,
}

fn check_inputs(config: &SbbConfig, source: &SampleBatch, target: &SampleBatch) -> Result<Vec<String>> {
    let warnings = config.validate()?;
    if source.is_empty() {
        return Err(Error::Empty("source sample"));
    }
    if target.is_empty() {
        return Err(Error::Empty("target sample"));
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: target.dim(),
        });
    }
    if !source.all_finite() || !target.all_finite() {
        return Err(Error::NonFinite("training sample"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(warnings)
}

/// Full variant: potential and transport network.
pub fn train(config: &SbbConfig, source: &SampleBatch, target: &SampleBatch) -> Result<(GmmPotential, TransportNet, TrainReport)> {
    let cfg = SbbConfig {
        variant: Variant::Full,
        ..config.clone()
    };
    let (model, report) = train_with(&cfg, source, target, &mut |_| Ok(()))?;
    let net = match model.net {
        Some(net) => net,
        None => TransportNet::new(source.dim(), cfg.t_model, cfg.d_model, cfg.horizon, &mut rng::seeded(cfg.seed))?,
    };
    Ok((model.potential, net, report))
}

/// β-large variant: endpoints mapped by `x − s/β`, no network.
pub fn train_beta_large(config: &SbbConfig, source: &SampleBatch, target: &SampleBatch) -> Result<(GmmPotential, TrainReport)> {
    let cfg = SbbConfig {
        variant: Variant::BetaLarge,
        ..config.clone()
    };
    let (model, report) = train_with(&cfg, source, target, &mut |_| Ok(()))?;
    Ok((model.potential, report))
}

/// Runs the variant named in `config`, calling `observer` after every outer iteration.
pub fn train_with(
    config: &SbbConfig,
    source: &SampleBatch,
    target: &SampleBatch,
    observer: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<(SbbModel, TrainReport)> {
    let started = Instant::now();
    let warnings = check_inputs(config, source, target)?;
    let mut report = TrainReport::new(config, warnings);
    let (horizon, t_tilde) = (config.horizon, config.t_tilde);

    let mut init_rng = rng::stream(config.seed, streams::INIT);
    let mut potential = GmmPotential::init(
        config.components,
        config.epsilon,
        horizon,
        target,
        config.init_log_sigma,
        &mut init_rng,
    )?;
    let mut net = TransportNet::new(source.dim(), config.t_model, config.d_model, horizon, &mut init_rng)?;
    let uses_net = config.variant == Variant::Full && config.beta.is_some();

    let mut theta_rng = rng::stream(config.seed, streams::THETA);
    let mut z_rng = rng::stream(config.seed, streams::TRANSPORT);
    let mut theta_opt = Adam::new(config.lr);
    let mut z_opt = Adam::new(config.lr);
    let (theta_steps, z_steps) = config.step_budget();

    for k in 0..config.outer_iterations {
        let iter_start = Instant::now();
        let (y0, y_terminal) = match (config.beta, config.variant) {
            (None, _) => (source.clone(), target.clone()),
            (Some(_), Variant::Full) => (
                map_with_net(&net, 0.0, source)?,
                map_with_net(&net, horizon, target)?,
            ),
            (Some(beta), Variant::BetaLarge) if k > 0 => (
                map_beta_large(&potential, beta, 0.0, source, config.beta_large_map)?,
                map_beta_large(&potential, beta, t_tilde, target, config.beta_large_map)?,
            ),
            (Some(_), Variant::BetaLarge) => (source.clone(), target.clone()),
        };

        let dsm_losses = fit_theta(&mut potential, &mut theta_opt, &y0, &y_terminal, theta_steps, config, &mut theta_rng, k)?;

        let mut it = IterationReport {
            iteration: k,
            dsm_losses,
            transport_losses: Vec::new(),
            transport_stopped_at: None,
            map_consistency: None,
            monotonicity_violations: None,
            seconds: 0.0,
        };
        if let Some(beta) = config.beta {
            it.monotonicity_violations = monotonicity_check(&potential, beta, source, target);
            if let Some(v) = it.monotonicity_violations.filter(|&v| v > 0) {
                log::warn!("iteration {k}: forward map not increasing at {v} grid points");
            }
        }
        if uses_net {
            let beta = config.beta.expect("net is only used for finite beta");
            let x0_mapped = map_forward(&potential, beta, 0.0, source)?;
            let xt_mapped = map_forward(&potential, beta, t_tilde, target)?;
            let (losses, stopped) = fit_transport(
                &mut net, &mut z_opt, source, &x0_mapped, target, &xt_mapped, z_steps, config, &mut z_rng, k,
            )?;
            it.transport_losses = losses;
            it.transport_stopped_at = stopped;
            it.map_consistency = Some(map_consistency(&net, source, &x0_mapped)?);
        }
        it.seconds = iter_start.elapsed().as_secs_f64();
        log::info!(
            "iteration {k}: dsm {:.5} -> {:.5}, transport {:?}",
            it.dsm_losses.first().copied().unwrap_or(f64::NAN),
            it.dsm_losses.last().copied().unwrap_or(f64::NAN),
            it.transport_losses.last()
        );
        report.iterations.push(it);
        observer(&Checkpoint {
            iteration: k,
            potential: &potential,
            net: uses_net.then_some(&net),
        })?;
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    let model = SbbModel {
        potential,
        net: uses_net.then_some(net),
        beta: config.beta,
        t_tilde,
        variant: config.variant,
        beta_large_map: config.beta_large_map,
    };
    Ok((model, report))
}

/// Plain bridge matching with raw endpoints: the β = ∞ baseline written out
/// directly, without going through the endpoint maps.
pub fn train_lightsb_m(config: &SbbConfig, source: &SampleBatch, target: &SampleBatch) -> Result<(GmmPotential, TrainReport)> {
    let started = Instant::now();
    let cfg = SbbConfig {
        beta: None,
        ..config.clone()
    };
    let warnings = check_inputs(&cfg, source, target)?;
    let mut report = TrainReport::new(&cfg, warnings);
    let mut init_rng = rng::stream(cfg.seed, streams::INIT);
    let mut potential = GmmPotential::init(cfg.components, cfg.epsilon, cfg.horizon, target, cfg.init_log_sigma, &mut init_rng)?;
    let mut rng = rng::stream(cfg.seed, streams::THETA);
    let mut opt = Adam::new(cfg.lr);
    let (steps, _) = cfg.step_budget();
    let d = source.dim();
    let t_max = cfg.bridge_t_max();
    let mut scratch = DriftScratch::default();
    let mut z = vec![0.0; d];
    for k in 0..cfg.outer_iterations {
        let iter_start = Instant::now();
        let mut losses = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut samples = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let x0 = source.row(rng.random_range(0..source.len()));
                let xt = target.row(rng.random_range(0..target.len()));
                let t = rng.random::<f64>() * t_max;
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                samples.push(bridge_at(x0, xt, t, cfg.horizon, cfg.epsilon, &z)?);
            }
            let batch = BridgeBatch::from_samples(&samples)?;
            let (loss, grad) = dsm_loss_unchecked(&potential, &batch, &mut scratch);
            if !loss.is_finite() {
                return Err(diverged(k, "theta", step, &potential));
            }
            opt.step(potential.params_mut().into(), &grad.slices());
            losses.push(loss);
        }
        report.iterations.push(IterationReport {
            iteration: k,
            dsm_losses: losses,
            transport_losses: Vec::new(),
            transport_stopped_at: None,
            map_consistency: None,
            monotonicity_violations: None,
            seconds: iter_start.elapsed().as_secs_f64(),
        });
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok((potential, report))
}

fn diverged(iteration: usize, phase: &'static str, step: usize, potential: &GmmPotential) -> Error {
    let state = serde_json::to_string(potential).unwrap_or_else(|e| format!("<unserializable: {e}>"));
    Error::Diverged {
        iteration,
        phase,
        step,
        state,
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_theta(
    potential: &mut GmmPotential,
    opt: &mut Adam,
    y0: &SampleBatch,
    y_terminal: &SampleBatch,
    steps: usize,
    config: &SbbConfig,
    rng: &mut SbbRng,
    iteration: usize,
) -> Result<Vec<f64>> {
    let mut batch = BridgeBatch::new(y0.dim());
    let mut scratch = DriftScratch::default();
    let mut losses = Vec::with_capacity(steps);
    let t_max = config.bridge_t_max();
    for step in 0..steps {
        batch.clear();
        for _ in 0..config.batch_size {
            let a = y0.row(rng.random_range(0..y0.len()));
            let b = y_terminal.row(rng.random_range(0..y_terminal.len()));
            batch.push_sampled(a, b, config.horizon, config.epsilon, t_max, rng);
        }
        let (loss, grad) = dsm_loss_unchecked(potential, &batch, &mut scratch);
        if !loss.is_finite() || grad.slices().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(diverged(iteration, "theta", step, potential));
        }
        opt.step(potential.params_mut().into(), &grad.slices());
        if !potential.all_finite() {
            return Err(diverged(iteration, "theta", step, potential));
        }
        losses.push(loss);
    }
    Ok(losses)
}

#[allow(clippy::too_many_arguments)]
fn fit_transport(
    net: &mut TransportNet,
    opt: &mut Adam,
    x0: &SampleBatch,
    x0_mapped: &SampleBatch,
    x_terminal: &SampleBatch,
    xt_mapped: &SampleBatch,
    steps: usize,
    config: &SbbConfig,
    rng: &mut SbbRng,
    iteration: usize,
) -> Result<(Vec<f64>, Option<usize>)> {
    let mut losses = Vec::with_capacity(steps);
    let w = config.early_stop_window;
    for step in 0..steps {
        let mut batch = ZRegressionBatch {
            pairs: Vec::with_capacity(2 * config.batch_size),
        };
        for _ in 0..config.batch_size {
            let i = rng.random_range(0..x0.len());
            let j = rng.random_range(0..x_terminal.len());
            batch.pairs.push(ZPair {
                time: 0.0,
                mapped: x0_mapped.row(i).to_vec(),
                target: x0.row(i).to_vec(),
            });
            batch.pairs.push(ZPair {
                time: config.horizon,
                mapped: xt_mapped.row(j).to_vec(),
                target: x_terminal.row(j).to_vec(),
            });
        }
        let (loss, grad) = net.z_loss(&batch)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::Diverged {
                iteration,
                phase: "transport",
                step,
                state: serde_json::to_string(net).unwrap_or_default(),
            });
        }
        opt.step(net.tensors_mut(), &grad.tensors());
        net.activate();
        losses.push(loss);
        if w > 0 && losses.len() >= 2 * w {
            let n = losses.len();
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            let improvement = mean(&losses[n - 2 * w..n - w]) - mean(&losses[n - w..]);
            if improvement < config.early_stop_tol {
                return Ok((losses, Some(step)));
            }
        }
    }
    Ok((losses, None))
}

fn map_rows(batch: &SampleBatch, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<SampleBatch> {
    let mut out = SampleBatch::with_capacity(batch.dim(), batch.len());
    for r in batch.rows() {
        out.push(&f(r)?)?;
    }
    out.provenance = batch.provenance;
    out.seed = batch.seed;
    Ok(out)
}

fn map_with_net(net: &TransportNet, t: f64, batch: &SampleBatch) -> Result<SampleBatch> {
    map_rows(batch, |x| net.z_forward(t, x))
}

fn map_forward(potential: &GmmPotential, beta: f64, t: f64, batch: &SampleBatch) -> Result<SampleBatch> {
    map_rows(batch, |x| potential.forward_map(beta, t, x))
}

/// `𝒴_t(x) ≈ x − s(t, x)/β`, or the literal logarithmic form.
pub fn map_beta_large(potential: &GmmPotential, beta: f64, t: f64, batch: &SampleBatch, form: BetaLargeMap) -> Result<SampleBatch> {
    map_rows(batch, |x| beta_large_point(potential, beta, t, x, form))
}

pub(crate) fn beta_large_point(potential: &GmmPotential, beta: f64, t: f64, x: &[f64], form: BetaLargeMap) -> Result<Vec<f64>> {
    let s = potential.drift(t, x)?;
    match form {
        BetaLargeMap::Score => Ok(x.iter().zip(&s).map(|(x, s)| x - s / beta).collect()),
        BetaLargeMap::LogScore => {
            if let Some(v) = s.iter().find(|v| **v <= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "logarithmic beta-large map needs a positive drift, got {v}"
                )));
            }
            Ok(x.iter().zip(&s).map(|(x, s)| x - s.ln() / beta).collect())
        }
    }
}

fn map_consistency(net: &TransportNet, x0: &SampleBatch, x0_mapped: &SampleBatch) -> Result<f64> {
    let mut total = 0.0;
    for (x, m) in x0.rows().zip(x0_mapped.rows()) {
        let z = net.z_forward(0.0, m)?;
        total += z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    }
    Ok(total / x0.len() as f64)
}

/// Counts grid points where `𝒳_0` fails to increase; 1D only.
fn monotonicity_check(potential: &GmmPotential, beta: f64, source: &SampleBatch, target: &SampleBatch) -> Option<usize> {
    if potential.dim() != 1 {
        return None;
    }
    let all = source.as_slice().iter().chain(target.as_slice());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let n = 200;
    let mut prev = f64::NEG_INFINITY;
    let mut violations = 0;
    for i in 0..=n {
        let y = lo + (hi - lo) * i as f64 / n as f64;
        let x = potential.forward_map(beta, 0.0, &[y]).ok()?[0];
        if x <= prev {
            violations += 1;
        }
        prev = x;
    }
    Some(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_accepts_inf_string_and_null() {
        #[derive(Deserialize)]
        struct W {
            #[serde(with = "beta_serde")]
            beta: Option<f64>,
        }
        let w: W = toml::from_str("beta = \"inf\"").unwrap();
        assert_eq!(w.beta, None);
        let w: W = toml::from_str("beta = 10").unwrap();
        assert_eq!(w.beta, Some(10.0));
        let w: W = serde_json::from_str(r#"{"beta": null}"#).unwrap();
        assert_eq!(w.beta, None);
        assert!(toml::from_str::<W>("beta = \"big\"").is_err());
    }

    #[test]
    fn step_budget_split() {
        let c = SbbConfig::default();
        assert_eq!(c.step_budget(), (2400, 600));
        let inf = SbbConfig { beta: None, ..c.clone() };
        assert_eq!(inf.step_budget(), (3000, 0));
    }

    #[test]
    fn validation() {
        assert!(SbbConfig::default().validate().unwrap().is_empty());
        let low = SbbConfig { beta: Some(1.0), ..SbbConfig::default() };
        assert_eq!(low.validate().unwrap().len(), 1);
        let bad = SbbConfig { t_tilde: 1.0, ..SbbConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SbbConfig { beta: Some(0.0), ..SbbConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bridge_pins_endpoints() {
        let s = bridge_at(&[1.0, -2.0], &[3.0, 4.0], 0.0, 1.0, 1.0, &[0.5, 0.5]).unwrap();
        assert_eq!(s.yt, vec![1.0, -2.0]);
        let s = bridge_at(&[1.0, -2.0], &[3.0, 4.0], 1.0 - 1e-12, 1.0, 1.0, &[0.5, 0.5]).unwrap();
        assert!((s.yt[0] - 3.0).abs() < 1e-5 && (s.yt[1] - 4.0).abs() < 1e-5);
        assert!(bridge_at(&[0.0], &[0.0], 1.0, 1.0, 1.0, &[0.0]).is_err());
    }

    #[test]
    fn batched_sampling_matches_single_draws() {
        let (a, b) = ([0.3, -1.0], [2.0, 0.5]);
        let mut r1 = rng::seeded(5);
        let mut r2 = rng::seeded(5);
        let mut batch = BridgeBatch::new(2);
        batch.push_sampled(&a, &b, 1.0, 0.7, 0.99, &mut r1);
        let s = sample_bridge(&a, &b, 1.0, 0.7, 0.99, &mut r2).unwrap();
        assert_eq!(batch.t[0], s.t);
        assert_eq!(batch.yt, s.yt);
        assert_eq!(batch.target, s.target);
    }

    #[test]
    fn dsm_loss_rejects_terminal_time() {
        let p = GmmPotential::from_parts(1, 1.0, 1.0, vec![0.0], vec![0.0], vec![0.0]).unwrap();
        let mut b = BridgeBatch::new(1);
        b.push(1.0, &[0.0], &[0.0]);
        assert!(dsm_loss(&p, &b).is_err());
        assert!(dsm_loss(&p, &BridgeBatch::new(1)).is_err());
    }
}
