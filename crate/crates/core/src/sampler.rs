//! Inference: the simulation-free route and Euler–Maruyama simulation of `Y`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{DriftScratch, GmmPotential};
use crate::model::SbbModel;
use crate::points::{Provenance, SampleBatch};
use crate::rng::{self, SbbRng};

pub const DEFAULT_SDE_STEPS: usize = 100;

/// Per-trajectory streams start here so they never collide with the fixed ids.
const TRAJECTORY_STREAM_BASE: u64 = 1 << 32;

/// Intermediate and final points of the simulation-free route.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub y0: SampleBatch,
    pub y_terminal: SampleBatch,
    pub x_terminal: SampleBatch,
}

/// `x_T = 𝒳_{T̃}(y_T)` with `y_T ~ π(· | 𝒴_0(x_0))`.
pub fn infer(model: &SbbModel, x0: &SampleBatch, rng: &mut SbbRng) -> Result<SampleBatch> {
    Ok(infer_detailed(model, x0, rng)?.x_terminal)
}

pub fn infer_detailed(model: &SbbModel, x0: &SampleBatch, rng: &mut SbbRng) -> Result<Inference> {
    if !model.all_finite() {
        return Err(Error::NonFinite("model parameters"));
    }
    if x0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x0.dim(),
        });
    }
    let d = model.dim();
    let mut y0 = SampleBatch::with_capacity(d, x0.len());
    let mut y_terminal = SampleBatch::with_capacity(d, x0.len());
    let mut x_terminal = SampleBatch::with_capacity(d, x0.len());
    for x in x0.rows() {
        let y = model.map_source(x)?;
        let yt = model.potential.sample_conditional_with(&y, rng)?;
        let xt = model.recover(&yt)?;
        y0.push(&y)?;
        y_terminal.push(&yt)?;
        x_terminal.push(&xt)?;
    }
    Ok(Inference {
        y0,
        y_terminal,
        x_terminal: x_terminal.tagged(Provenance::Generated, None),
    })
}

/// Coupling draws straight from the raw source points.
pub fn lightsb_infer(potential: &GmmPotential, x0: &SampleBatch, rng: &mut SbbRng) -> Result<SampleBatch> {
    let mut out = SampleBatch::with_capacity(potential.dim(), x0.len());
    for x in x0.rows() {
        out.push(&potential.sample_conditional_with(x, rng)?)?;
    }
    Ok(out.tagged(Provenance::Generated, None))
}

/// One simulated path on a uniform grid over `[0, T̃]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    /// `times.len() × dim`, row-major.
    pub y_path: Vec<f64>,
    /// `x_t = 𝒳_t(y_t)` at the same times.
    pub x_path: Vec<f64>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y_path[i * self.dim..(i + 1) * self.dim]
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x_path[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y_last(&self) -> &[f64] {
        self.y_at(self.len() - 1)
    }

    pub fn x_last(&self) -> &[f64] {
        self.x_at(self.len() - 1)
    }
}

/// Euler–Maruyama for `dY = s(t, Y) dt + √ε dW` with fresh Gaussian increments.
pub fn simulate_y_sde(model: &SbbModel, y0: &[f64], n_steps: usize, rng: &mut SbbRng) -> Result<Trajectory> {
    let noise: Vec<f64> = (0..n_steps * model.dim()).map(|_| rng.sample(StandardNormal)).collect();
    simulate_with_noise(model, y0, n_steps, &noise)
}

/// Euler–Maruyama driven by the given standard normals, `n_steps × d` of them.
pub fn simulate_with_noise(model: &SbbModel, y0: &[f64], n_steps: usize, noise: &[f64]) -> Result<Trajectory> {
    let d = model.dim();
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
    }
    if noise.len() != n_steps * d {
        return Err(Error::DimensionMismatch {
            expected: n_steps * d,
            got: noise.len(),
        });
    }
    if y0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y0.len(),
        });
    }
    crate::error::ensure_finite(y0, "initial state")?;
    let p = &model.potential;
    let t_end = model.t_tilde;
    let h = t_end / n_steps as f64;
    let sqrt_eps_h = (p.epsilon() * h).sqrt();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut y_path = Vec::with_capacity((n_steps + 1) * d);
    let mut x_path = Vec::with_capacity((n_steps + 1) * d);
    let mut y = y0.to_vec();
    let mut s = vec![0.0; d];
    let mut scratch = DriftScratch::default();
    p.prepare(&mut scratch);
    for i in 0..=n_steps {
        // The last grid time is exactly T̃, never T.
        let t = if i == n_steps { t_end } else { i as f64 * h };
        times.push(t);
        y_path.extend_from_slice(&y);
        x_path.extend_from_slice(&model.forward(t, &y)?);
        if i == n_steps {
            break;
        }
        p.drift_prepared(t, &y, &mut s, &mut scratch);
        for k in 0..d {
            y[k] += s[k] * h + sqrt_eps_h * noise[i * d + k];
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { last_finite_step: i });
        }
    }
    Ok(Trajectory {
        dim: d,
        times,
        y_path,
        x_path,
        seed: None,
    })
}

/// Simulates one path per row of `y0`, in parallel, with stream `(seed, row)`.
pub fn simulate_batch(model: &SbbModel, y0: &SampleBatch, n_steps: usize, seed: u64) -> Result<Vec<Trajectory>> {
    (0..y0.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, TRAJECTORY_STREAM_BASE + i as u64);
            let mut tr = simulate_y_sde(model, y0.row(i), n_steps, &mut rng)?;
            tr.seed = Some(seed);
            Ok(tr)
        })
        .collect()
}

/// CSV with columns `traj_id, t, y_1..y_d, x_1..x_d`, ordered by `(traj_id, t)`.
pub fn export_trajectories(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let first = trajs.first().ok_or(Error::Empty("trajectory list"))?;
    let d = first.dim;
    if trajs.iter().any(|t| t.dim != d) {
        return Err(Error::InvalidParameter("trajectories have different dimensions".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend((1..=d).map(|k| format!("y_{k}")));
    header.extend((1..=d).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for (id, tr) in trajs.iter().enumerate() {
        for i in 0..tr.len() {
            let mut rec = vec![id.to_string(), tr.times[i].to_string()];
            rec.extend(tr.y_at(i).iter().map(|v| v.to_string()));
            rec.extend(tr.x_at(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_trajectories`].
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cols = rdr.headers()?.len();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(Error::Config(format!("{}: unexpected trajectory header", path.display())));
    }
    let d = (cols - 2) / 2;
    let mut out: Vec<Trajectory> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("{}: `{s}`: {e}", path.display()))))
            .collect::<Result<_>>()?;
        let id = nums[0] as usize;
        if id == out.len() {
            out.push(Trajectory {
                dim: d,
                times: Vec::new(),
                y_path: Vec::new(),
                x_path: Vec::new(),
                seed: None,
            });
        }
        let tr = out
            .get_mut(id)
            .ok_or_else(|| Error::Config(format!("{}: trajectory ids out of order", path.display())))?;
        tr.times.push(nums[1]);
        tr.y_path.extend_from_slice(&nums[2..2 + d]);
        tr.x_path.extend_from_slice(&nums[2 + d..]);
    }
    Ok(out)
}
