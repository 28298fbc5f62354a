//! JSON analysis configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use incdiss::{BoxRegion, SupplyQsr};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Li2,
    Qsr,
    Passivity,
    Simulate,
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    DiskLtiClosedloop,
    DiskLpvClosedloop,
    ScalarLtiOracle,
}

impl SystemName {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemName::DiskLtiClosedloop => "disk_lti_closedloop",
            SystemName::DiskLpvClosedloop => "disk_lpv_closedloop",
            SystemName::ScalarLtiOracle => "scalar_lti_oracle",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Supply matrices as lists of rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplyConfig {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub bisect_tol: f64,
    pub feas_tol: f64,
    pub gamma_cap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            bisect_tol: 1e-3,
            feas_tol: 1e-7,
            gamma_cap: 1e3,
        }
    }
}

/// Artifact file names, relative to the output directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub certificate: PathBuf,
    pub trajectory: PathBuf,
    pub summary: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            certificate: "certificate.json".into(),
            trajectory: "trajectory.csv".into(),
            summary: "summary.txt".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub system: SystemName,
    pub analysis: Analysis,
    #[serde(default)]
    pub region: Option<RegionConfig>,
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    #[serde(default)]
    pub supply: Option<SupplyConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub settle_k: Option<usize>,
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default = "default_disturbance")]
    pub disturbance: String,
    /// Certificate to check (`validate` only), relative to the config file.
    #[serde(default)]
    pub certificate: Option<PathBuf>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_pair_horizon")]
    pub pair_horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_horizon() -> usize {
    1000
}

fn default_disturbance() -> String {
    "zero".into()
}

fn default_pairs() -> usize {
    100
}

fn default_pair_horizon() -> usize {
    100
}

impl AnalysisConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: AnalysisConfig = serde_json::from_str(text).context("malformed config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        if let (Some(cert), Some(dir)) = (&cfg.certificate, path.parent()) {
            cfg.certificate = Some(dir.join(cert));
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.bisect_tol", t.bisect_tol),
            ("tolerances.feas_tol", t.feas_tol),
            ("tolerances.gamma_cap", t.gamma_cap),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("field `{name}` must be positive, got {v}");
            }
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() || grid.contains(&0) {
                bail!("field `grid` needs at least one dimension and counts >= 1, got {grid:?}");
            }
        }
        if self.analysis == Analysis::Qsr && self.supply.is_none() {
            bail!("field `supply` is required for analysis `qsr`");
        }
        if self.analysis == Analysis::Validate {
            if self.certificate.is_none() {
                bail!("field `certificate` is required for analysis `validate`");
            }
            if self.pairs == 0 {
                bail!("field `pairs` must be at least 1");
            }
            if self.pair_horizon == 0 {
                bail!("field `pair_horizon` must be at least 1");
            }
        }
        if self.analysis == Analysis::Simulate && self.horizon == 0 {
            bail!("field `horizon` must be at least 1");
        }
        Disturbance::parse(&self.disturbance).context("field `disturbance`")?;
        if let Some(r) = &self.region {
            self.region_from(r)?;
        }
        Ok(())
    }

    fn region_from(&self, r: &RegionConfig) -> Result<BoxRegion> {
        if r.lower.len() != r.upper.len() {
            bail!(
                "field `region`: {} lower bounds but {} upper bounds",
                r.lower.len(),
                r.upper.len()
            );
        }
        BoxRegion::new(
            r.lower
                .iter()
                .copied()
                .zip(r.upper.iter().copied())
                .collect(),
        )
        .context("field `region`")
    }

    pub fn region(&self) -> Result<Option<BoxRegion>> {
        self.region
            .as_ref()
            .map(|r| self.region_from(r))
            .transpose()
    }

    pub fn supply(&self) -> Result<Option<SupplyQsr>> {
        let Some(s) = &self.supply else {
            return Ok(None);
        };
        let q = matrix("supply.Q", &s.q)?;
        let sm = matrix("supply.S", &s.s)?;
        let r = matrix("supply.R", &s.r)?;
        Ok(Some(SupplyQsr::new(q, sm, r).context("field `supply`")?))
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        bail!("field `{name}` has rows of unequal length");
    }
    Ok(DMatrix::from_fn(rows.len(), n_cols, |i, j| rows[i][j]))
}

/// Disturbance signal for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disturbance {
    Zero,
    Constant(f64),
    /// `scale * min(k, k_sat)`.
    RampSat {
        scale: f64,
        k_sat: usize,
    },
}

impl Disturbance {
    /// Parses `zero`, `constant(v)` or `ramp_sat(scale, k_sat)`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "zero" {
            return Ok(Disturbance::Zero);
        }
        let (name, rest) = spec
            .split_once('(')
            .with_context(|| format!("unknown disturbance `{spec}`"))?;
        let args = rest
            .strip_suffix(')')
            .with_context(|| format!("missing `)` in `{spec}`"))?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .with_context(|| format!("bad number `{s}` in `{spec}`"))
        };
        match (name.trim(), args.as_slice()) {
            ("constant", [v]) => Ok(Disturbance::Constant(num(v)?)),
            ("ramp_sat", [s, k]) => Ok(Disturbance::RampSat {
                scale: num(s)?,
                k_sat: k
                    .parse()
                    .with_context(|| format!("bad step count `{k}` in `{spec}`"))?,
            }),
            _ => bail!("unknown disturbance `{spec}`; expected zero, constant(v) or ramp_sat(scale, k_sat)"),
        }
    }

    pub fn sequence(self, n_w: usize, horizon: usize) -> Vec<DVector<f64>> {
        (0..horizon)
            .map(|k| {
                let v = match self {
                    Disturbance::Zero => 0.0,
                    Disturbance::Constant(v) => v,
                    Disturbance::RampSat { scale, k_sat } => scale * k.min(k_sat) as f64,
                };
                DVector::from_element(n_w, v)
            })
            .collect()
    }
}
