//! Sample-based metrics: exact empirical W₂, KS distance, control errors.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::points::SampleBatch;
use crate::rng::SbbRng;

pub const DEFAULT_EXACT_CAP: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Method {
    ExactAssignment,
    SubsampleAvg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleStats {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Result {
    pub value: f64,
    pub n_used: usize,
    pub method: W2Method,
    pub subsample_stats: Option<SubsampleStats>,
}

fn check_pair(a: &SampleBatch, b: &SampleBatch) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("W2 sample"));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::NonFinite("W2 sample"));
    }
    Ok(())
}

/// Exact empirical W₂ between equal-size sets, up to the default cap.
pub fn w2_exact(a: &SampleBatch, b: &SampleBatch) -> Result<W2Result> {
    w2_exact_capped(a, b, DEFAULT_EXACT_CAP)
}

pub fn w2_exact_capped(a: &SampleBatch, b: &SampleBatch, cap: usize) -> Result<W2Result> {
    check_pair(a, b)?;
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    let mut cost = vec![0.0; n * n];
    for (i, x) in a.rows().enumerate() {
        for (j, y) in b.rows().enumerate() {
            cost[i * n + j] = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        }
    }
    let sol = assignment::solve(n, &cost);
    let total = assignment::total_cost(n, &cost, &sol);
    Ok(W2Result {
        value: (total.max(0.0) / n as f64).sqrt(),
        n_used: n,
        method: W2Method::ExactAssignment,
        subsample_stats: None,
    })
}

/// Mean and standard deviation of exact W₂ over `repeats` random subsample
/// pairs of size `n_sub`. Biased upward relative to the population distance.
pub fn w2_subsampled(a: &SampleBatch, b: &SampleBatch, n_sub: usize, repeats: usize, rng: &mut SbbRng) -> Result<W2Result> {
    check_pair(a, b)?;
    if n_sub == 0 || repeats == 0 {
        return Err(Error::InvalidParameter("n_sub and repeats must be at least 1".into()));
    }
    if n_sub > a.len().min(b.len()) {
        return Err(Error::InvalidParameter(format!(
            "n_sub {n_sub} exceeds the smaller sample size {}",
            a.len().min(b.len())
        )));
    }
    if n_sub > DEFAULT_EXACT_CAP {
        return Err(Error::TooLarge {
            n: n_sub,
            cap: DEFAULT_EXACT_CAP,
        });
    }
    let draws: Vec<(Vec<usize>, Vec<usize>)> = (0..repeats)
        .map(|_| {
            let ia = index::sample(rng, a.len(), n_sub).into_vec();
            let ib = index::sample(rng, b.len(), n_sub).into_vec();
            (ia, ib)
        })
        .collect();
    let values: Vec<f64> = draws
        .par_iter()
        .map(|(ia, ib)| w2_exact(&a.select(ia), &b.select(ib)).map(|r| r.value))
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(W2Result {
        value: mean,
        n_used: n_sub,
        method: W2Method::SubsampleAvg,
        subsample_stats: Some(SubsampleStats { mean, std, values }),
    })
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ecdf_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("ECDF sample"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("ECDF sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// KS distance between a sample and a continuous CDF.
pub fn ks_against_cdf(a: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("ECDF sample"));
    }
    let mut a = a.to_vec();
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in a.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(sup)
}

/// Max-abs drift and volatility errors over `points` of `(t, x)`.
pub fn control_error(
    alpha_hat: impl Fn(f64, f64) -> f64,
    sigma_hat: impl Fn(f64, f64) -> f64,
    alpha_ref: impl Fn(f64, f64) -> f64,
    sigma_ref: impl Fn(f64, f64) -> f64,
    points: &[(f64, f64)],
) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::Empty("evaluation points"));
    }
    let mut ea = 0.0f64;
    let mut es = 0.0f64;
    for &(t, x) in points {
        let vals = [alpha_hat(t, x), sigma_hat(t, x), alpha_ref(t, x), sigma_ref(t, x)];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control value"));
        }
        ea = ea.max((vals[0] - vals[2]).abs());
        es = es.max((vals[1] - vals[3]).abs());
    }
    Ok((ea, es))
}
