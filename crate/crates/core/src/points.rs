//! Row-major point sets.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a batch of points came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Source,
    Target,
    Bridge,
    Generated,
    #[default]
    Unspecified,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Source => "source",
            Provenance::Target => "target",
            Provenance::Bridge => "bridge",
            Provenance::Generated => "generated",
            Provenance::Unspecified => "unspecified",
        };
        f.write_str(s)
    }
}

/// `n` points in `d` dimensions, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    dim: usize,
    data: Vec<f64>,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SampleBatch {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        Ok(Self {
            dim,
            data,
            provenance: Provenance::Unspecified,
            seed: None,
        })
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * n),
            provenance: Provenance::Unspecified,
            seed: None,
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or(Error::Empty("rows"))?;
        let mut batch = Self::with_capacity(dim, rows.len());
        for r in rows {
            batch.push(r.as_ref())?;
        }
        Ok(batch)
    }

    pub fn tagged(mut self, provenance: Provenance, seed: Option<u64>) -> Self {
        self.provenance = provenance;
        self.seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> SampleBatch {
        let mut out = SampleBatch::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out.provenance = self.provenance;
        out.seed = self.seed;
        out
    }

    /// Multiplies every coordinate by `s`.
    pub fn scaled(&self, s: f64) -> SampleBatch {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Unbiased per-coordinate variance.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let denom = (self.len().saturating_sub(1)).max(1) as f64;
        let mut v = vec![0.0; self.dim];
        for r in self.rows() {
            for k in 0..self.dim {
                let c = r[k] - m[k];
                v[k] += c * c;
            }
        }
        v.iter_mut().for_each(|x| *x /= denom);
        v
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Headered CSV, one row per point, columns `x1..xd`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(&header)?;
        for r in self.rows() {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let dim = rdr.headers()?.len();
        let mut batch = SampleBatch::with_capacity(dim.max(1), 0);
        if dim == 0 {
            return Err(Error::Empty("csv header"));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let row: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}: bad number `{s}`: {e}", path.display())))
                })
                .collect::<Result<_>>()?;
            batch.push(&row)?;
        }
        Ok(batch)
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_data() {
        assert!(SampleBatch::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(SampleBatch::new(0, vec![]).is_err());
    }

    #[test]
    fn moments() {
        let b = SampleBatch::from_rows(&[[1.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(b.mean(), vec![2.0, 0.0]);
        assert_eq!(b.variance(), vec![2.0, 0.0]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        let b = SampleBatch::from_rows(&[[0.1, -1e-300], [std::f64::consts::PI, 7.0]]).unwrap();
        b.write_csv(&p).unwrap();
        let back = SampleBatch::read_csv(&p).unwrap();
        assert_eq!(back.as_slice(), b.as_slice());
    }
}
