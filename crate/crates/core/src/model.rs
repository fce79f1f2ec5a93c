//! A trained model: potential, optional inverse map, and the settings needed
//! to run inference with them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmPotential;
use crate::net::TransportNet;
use crate::trainer::{beta_large_point, beta_serde, BetaLargeMap, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbbModel {
    pub potential: GmmPotential,
    /// Present for the full variant with finite β.
    pub net: Option<TransportNet>,
    #[serde(with = "beta_serde")]
    pub beta: Option<f64>,
    pub t_tilde: f64,
    pub variant: Variant,
    pub beta_large_map: BetaLargeMap,
}

impl SbbModel {
    /// Plain bridge-matching model (β = ∞).
    pub fn lightsb(potential: GmmPotential, t_tilde: f64) -> Self {
        Self {
            potential,
            net: None,
            beta: None,
            t_tilde,
            variant: Variant::Full,
            beta_large_map: BetaLargeMap::Score,
        }
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// `y_0 = 𝒴_0(x_0)`.
    pub fn map_source(&self, x0: &[f64]) -> Result<Vec<f64>> {
        match (self.beta, self.variant, &self.net) {
            (None, _, _) => self.checked(x0),
            (Some(_), Variant::Full, Some(net)) => net.z_forward(0.0, x0),
            (Some(_), Variant::Full, None) => Err(Error::InvalidParameter(
                "finite-beta model has no transport network".into(),
            )),
            (Some(beta), Variant::BetaLarge, _) => beta_large_point(&self.potential, beta, 0.0, x0, self.beta_large_map),
        }
    }

    /// `x_T = 𝒳_{T̃}(y_T)`.
    pub fn recover(&self, y_terminal: &[f64]) -> Result<Vec<f64>> {
        match self.beta {
            None => self.checked(y_terminal),
            Some(beta) => self.potential.recover_x(beta, y_terminal, self.t_tilde),
        }
    }

    /// `x_t = 𝒳_t(y_t)`; identity for β = ∞.
    pub fn forward(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        match self.beta {
            None => self.checked(y),
            Some(beta) => self.potential.forward_map(beta, t, y),
        }
    }

    fn checked(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        crate::error::ensure_finite(x, "model input")?;
        Ok(x.to_vec())
    }

    pub fn all_finite(&self) -> bool {
        self.potential.all_finite() && self.net.as_ref().is_none_or(TransportNet::all_finite)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
