use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SupplyQsr;
use crate::embedding::BoxRegion;
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::num17::{f64_17, matrix_17, opt_f64_17};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisKind {
    Li2,
    Qsr,
    Passivity,
}

/// Quadratic incremental storage `V(x, x~) = (x - x~)' P (x - x~)` certified
/// on the grid of `region`.
///
/// JSON layout: `{analysis, gamma, P, Pbar, supply, region, grid, margin,
/// solver_status, seed}`, matrices row-major, numbers with 17 significant
/// digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageCertificate {
    pub analysis: AnalysisKind,
    #[serde(with = "opt_f64_17")]
    pub gamma: Option<f64>,
    #[serde(rename = "P", with = "matrix_17")]
    pub p: DMatrix<f64>,
    /// The Schur-form variable `gamma P^-1` for l2-gain certificates.
    #[serde(
        rename = "Pbar",
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_matrix"
    )]
    pub p_bar: Option<DMatrix<f64>>,
    pub supply: SupplyQsr,
    pub region: BoxRegion,
    pub grid: Vec<usize>,
    /// Smallest slack eigenvalue over all grid-point LMIs of the solved family.
    #[serde(with = "f64_17")]
    pub margin: f64,
    pub solver_status: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

mod opt_matrix {
    use super::*;
    use crate::num17::MatrixJson;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &Option<DMatrix<f64>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(MatrixJson::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<DMatrix<f64>>, D::Error> {
        let j: Option<MatrixJson> = Option::deserialize(d)?;
        j.map(|j| j.to_matrix().map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl StorageCertificate {
    pub fn n_x(&self) -> usize {
        self.p.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cert: StorageCertificate = serde_json::from_str(s)?;
        if !cert.p.is_square() {
            return Err(Error::InvalidArgument(
                "certificate P must be square".into(),
            ));
        }
        Ok(cert)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
