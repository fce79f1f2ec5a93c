//! Seeded generators for the benchmark distributions.
//!
//! The 2D sets follow the conventions of the reference simulation-free bridge
//! matching benchmarks: eight Gaussians at radius 5 with noise covariance
//! `√0.1·I`, and two moons with noise 0.2 mapped by `3x − 1`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::SampleBatch;
use crate::rng::{self, SbbRng};

pub const NAMES: &[&str] = &["gauss8", "moons", "normal2d", "gaussian1d", "dirac", "student_t", "multimodal1d"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Distribution {
    Gauss8 {
        #[serde(default = "gauss8_radius")]
        radius: f64,
        #[serde(default = "gauss8_std")]
        std: f64,
    },
    Moons {
        #[serde(default = "moons_noise")]
        noise: f64,
        #[serde(default = "moons_scale")]
        scale: f64,
        #[serde(default = "moons_shift")]
        shift: f64,
    },
    Normal2d,
    Gaussian1d {
        mean: f64,
        var: f64,
    },
    Dirac {
        point: Vec<f64>,
    },
    StudentT {
        dof: f64,
    },
    Multimodal1d {
        #[serde(default = "mm_means")]
        means: Vec<f64>,
        #[serde(default = "mm_var")]
        var: f64,
    },
}

fn gauss8_radius() -> f64 {
    5.0
}
fn gauss8_std() -> f64 {
    0.1f64.sqrt().sqrt()
}
fn moons_noise() -> f64 {
    0.2
}
fn moons_scale() -> f64 {
    3.0
}
fn moons_shift() -> f64 {
    -1.0
}
fn mm_means() -> Vec<f64> {
    vec![-2.0, 2.0]
}
fn mm_var() -> f64 {
    0.25
}

impl Distribution {
    pub fn gauss8() -> Self {
        Distribution::Gauss8 {
            radius: gauss8_radius(),
            std: gauss8_std(),
        }
    }

    pub fn moons() -> Self {
        Distribution::Moons {
            noise: moons_noise(),
            scale: moons_scale(),
            shift: moons_shift(),
        }
    }

    pub fn multimodal1d() -> Self {
        Distribution::Multimodal1d {
            means: mm_means(),
            var: mm_var(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Distribution::Gauss8 { .. } => "gauss8",
            Distribution::Moons { .. } => "moons",
            Distribution::Normal2d => "normal2d",
            Distribution::Gaussian1d { .. } => "gaussian1d",
            Distribution::Dirac { .. } => "dirac",
            Distribution::StudentT { .. } => "student_t",
            Distribution::Multimodal1d { .. } => "multimodal1d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Distribution::Gauss8 { .. } | Distribution::Moons { .. } | Distribution::Normal2d => 2,
            Distribution::Dirac { point } => point.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("{}: {m}", self.name())));
        match self {
            Distribution::Gauss8 { radius, std } if !(radius.is_finite() && *std >= 0.0 && std.is_finite()) => {
                bad("radius must be finite and std nonnegative")
            }
            Distribution::Moons { noise, scale, shift }
                if !(*noise >= 0.0 && noise.is_finite() && scale.is_finite() && shift.is_finite()) =>
            {
                bad("noise must be nonnegative and all constants finite")
            }
            Distribution::Gaussian1d { mean, var } if !(mean.is_finite() && *var >= 0.0 && var.is_finite()) => {
                bad("variance must be nonnegative")
            }
            Distribution::Dirac { point } if point.is_empty() || point.iter().any(|v| !v.is_finite()) => {
                bad("point must be a nonempty finite vector")
            }
            Distribution::StudentT { dof } if !(*dof > 0.0 && dof.is_finite()) => bad("dof must be positive"),
            Distribution::Multimodal1d { means, var } if means.is_empty() || !(*var >= 0.0) => {
                bad("need at least one mode and a nonnegative variance")
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut SbbRng) -> Result<SampleBatch> {
        self.validate()?;
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        match self {
            Distribution::Gauss8 { radius, std } => {
                for _ in 0..n {
                    let k = rng.random_range(0..8) as f64;
                    let (s, c) = (2.0 * PI * k / 8.0).sin_cos();
                    let zx: f64 = rng.sample(StandardNormal);
                    let zy: f64 = rng.sample(StandardNormal);
                    data.push(radius * c + std * zx);
                    data.push(radius * s + std * zy);
                }
            }
            Distribution::Moons { noise, scale, shift } => {
                let n_out = n / 2;
                let n_in = n - n_out;
                let lin = |m: usize, i: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
                let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
                pts.extend((0..n_out).map(|i| [lin(n_out, i).cos(), lin(n_out, i).sin()]));
                pts.extend((0..n_in).map(|i| [1.0 - lin(n_in, i).cos(), 1.0 - lin(n_in, i).sin() - 0.5]));
                pts.shuffle(rng);
                for p in pts {
                    for v in p {
                        let z: f64 = rng.sample(StandardNormal);
                        data.push(scale * (v + noise * z) + shift);
                    }
                }
            }
            Distribution::Normal2d => data.extend((0..2 * n).map(|_| rng.sample::<f64, _>(StandardNormal))),
            Distribution::Gaussian1d { mean, var } => {
                let sd = var.sqrt();
                data.extend((0..n).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)));
            }
            Distribution::Dirac { point } => {
                for _ in 0..n {
                    data.extend_from_slice(point);
                }
            }
            Distribution::StudentT { dof } => {
                let chi = ChiSquared::new(*dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for _ in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    let v = chi.sample(rng);
                    data.push(z / (v / dof).sqrt());
                }
            }
            Distribution::Multimodal1d { means, var } => {
                let sd = var.sqrt();
                for _ in 0..n {
                    let m = means[rng.random_range(0..means.len())];
                    data.push(m + sd * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        SampleBatch::new(d, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub dist: Distribution,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn generate(spec: &DatasetSpec) -> Result<SampleBatch> {
    if spec.n == 0 {
        return Err(Error::InvalidParameter("dataset size must be at least 1".into()));
    }
    Ok(spec.dist.sample(spec.n, &mut rng::seeded(spec.seed))?.tagged(Default::default(), Some(spec.seed)))
}

/// Looks a distribution up by name with its default constants.
pub fn by_name(name: &str) -> Result<Distribution> {
    Ok(match name {
        "gauss8" => Distribution::gauss8(),
        "moons" => Distribution::moons(),
        "normal2d" => Distribution::Normal2d,
        "gaussian1d" => Distribution::Gaussian1d { mean: 0.0, var: 1.0 },
        "dirac" => Distribution::Dirac { point: vec![0.0] },
        "student_t" => Distribution::StudentT { dof: 2.0 },
        "multimodal1d" => Distribution::multimodal1d(),
        _ => {
            return Err(Error::Unknown {
                kind: "dataset",
                name: name.to_string(),
                known: NAMES.join(", "),
            })
        }
    })
}

/// Deterministic disjoint split; the first part holds `round(n·fraction)` points.
pub fn train_test_split(batch: &SampleBatch, fraction: f64, seed: u64) -> Result<(SampleBatch, SampleBatch)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = batch.len();
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidParameter(format!("split of {n} points at {fraction} leaves an empty part")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    Ok((batch.select(&idx[..n_train]), batch.select(&idx[n_train..])))
}

/// CDF of Student's t with 2 degrees of freedom.
pub fn student_t2_cdf(t: f64) -> f64 {
    0.5 + t / (2.0 * (2.0 + t * t).sqrt())
}
