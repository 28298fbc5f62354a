//! Gridded LPV embedding of a system's differential form.
//!
//! The scheduling box is gridded equidistantly and the Jacobians of the
//! system are evaluated at each grid point. The LMI family built from the
//! result is exact on the grid; nothing is claimed between grid points.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::num17::{vec_f64_17, MatrixJson};
use crate::sysmodel::{jacobians, DifferentialMatrices, DiscreteTimeSystem};

/// Axis-aligned box, one `(lower, upper)` interval per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionJson", into = "RegionJson")]
pub struct BoxRegion {
    intervals: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RegionJson {
    #[serde(with = "vec_f64_17")]
    lower: Vec<f64>,
    #[serde(with = "vec_f64_17")]
    upper: Vec<f64>,
}

impl TryFrom<RegionJson> for BoxRegion {
    type Error = Error;
    fn try_from(r: RegionJson) -> Result<Self> {
        ensure_dim("region bounds", r.lower.len(), r.upper.len())?;
        BoxRegion::new(r.lower.into_iter().zip(r.upper).collect())
    }
}

impl From<BoxRegion> for RegionJson {
    fn from(b: BoxRegion) -> Self {
        RegionJson {
            lower: b.intervals.iter().map(|i| i.0).collect(),
            upper: b.intervals.iter().map(|i| i.1).collect(),
        }
    }
}

impl BoxRegion {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for (k, &(lo, hi)) in intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "interval {k} must be finite with lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(&self.intervals)
                .all(|(v, &(lo, hi))| *v >= lo && *v <= hi)
    }

    /// Same center, each half-width scaled by `frac`.
    pub fn scaled(&self, frac: f64) -> BoxRegion {
        BoxRegion {
            intervals: self
                .intervals
                .iter()
                .map(|&(lo, hi)| {
                    let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo) * frac);
                    (c - r, c + r)
                })
                .collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.intervals
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect()
    }
}

/// Equidistant points on each axis (endpoints included; a single point is
/// the midpoint), combined as a Cartesian product in lexicographic order
/// with the last coordinate varying fastest.
pub fn generate_grid(region: &BoxRegion, points_per_dim: &[usize]) -> Result<Vec<Vec<f64>>> {
    ensure_dim("grid counts", region.dim(), points_per_dim.len())?;
    if let Some(k) = points_per_dim.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!(
            "grid count for dimension {k} must be at least 1"
        )));
    }
    let axes: Vec<Vec<f64>> = region
        .intervals
        .iter()
        .zip(points_per_dim)
        .map(|(&(lo, hi), &n)| axis_points(lo, hi, n))
        .collect();
    let total: usize = points_per_dim.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        out.push(idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect());
        for d in (0..axes.len()).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

fn axis_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Scheduling map `rho = psi(x, w)` together with a lift `rho -> (x, w)`
/// at which the Jacobians for grid point `rho` are evaluated.
pub trait Scheduling: Send + Sync {
    fn n_rho(&self) -> usize;
    fn schedule(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;
    fn lift(&self, rho: &[f64]) -> (DVector<f64>, DVector<f64>);
}

/// Scheduling on the state alone, `rho = x`, lifting with `w = 0`.
///
/// Exact for systems whose differential form does not depend on `w`,
/// including every LTI system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateScheduling {
    pub n_x: usize,
    pub n_w: usize,
}

impl Scheduling for StateScheduling {
    fn n_rho(&self) -> usize {
        self.n_x
    }

    fn schedule(&self, x: &DVector<f64>, _w: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn lift(&self, rho: &[f64]) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_column_slice(rho), DVector::zeros(self.n_w))
    }
}

/// Differential form evaluated on a grid of scheduling points.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedEmbedding {
    pub region: BoxRegion,
    pub points_per_dim: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub matrices: Vec<DifferentialMatrices>,
}

/// Evaluate the system's Jacobians at every grid point of `region`.
///
/// Each grid point is lifted to `(x, w)`; the lift must reproduce the grid
/// point under the scheduling map (to `1e-9` relative), so that the stored
/// matrices really are `A(psi(x, w)) = A_delta(x, w)`.
pub fn embed_differential_form<S, M>(
    sys: &S,
    sched: &M,
    region: &BoxRegion,
    points_per_dim: &[usize],
    exec: Execution,
) -> Result<GriddedEmbedding>
where
    S: DiscreteTimeSystem + ?Sized,
    M: Scheduling + ?Sized,
{
    ensure_dim("scheduling dimension", region.dim(), sched.n_rho())?;
    let points = generate_grid(region, points_per_dim)?;
    let results = exec.map_range(points.len(), |i| {
        let rho = &points[i];
        let (x, w) = sched.lift(rho);
        let back = sched.schedule(&x, &w);
        let consistent = back.len() == rho.len()
            && back
                .iter()
                .zip(rho)
                .all(|(b, r)| (b - r).abs() <= 1e-9 * r.abs().max(1.0));
        if !consistent {
            return Err(Error::InvalidArgument(format!(
                "lift of grid point {i} {rho:?} schedules back to {:?}",
                back.as_slice()
            )));
        }
        jacobians(sys, &x, &w, None).map_err(|e| {
            Error::InvalidArgument(format!(
                "Jacobian evaluation failed at grid point {i} {rho:?}: {e}"
            ))
        })
    });
    let matrices = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(GriddedEmbedding {
        region: region.clone(),
        points_per_dim: points_per_dim.to_vec(),
        points,
        matrices,
    })
}

impl GriddedEmbedding {
    /// Embedding of an LTI system: one point carrying the constant matrices.
    pub fn constant(mats: DifferentialMatrices) -> Self {
        GriddedEmbedding {
            region: BoxRegion::new(vec![(-1.0, 1.0)]).expect("valid box"),
            points_per_dim: vec![1],
            points: vec![vec![0.0]],
            matrices: vec![mats],
        }
    }

    /// Attach matrices computed elsewhere to a grid.
    pub fn from_parts(
        region: BoxRegion,
        points_per_dim: Vec<usize>,
        matrices: Vec<DifferentialMatrices>,
    ) -> Result<Self> {
        let points = generate_grid(&region, &points_per_dim)?;
        ensure_dim("matrices per grid point", points.len(), matrices.len())?;
        let emb = GriddedEmbedding {
            region,
            points_per_dim,
            points,
            matrices,
        };
        emb.validate()?;
        Ok(emb)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.matrices.first().map(|m| (m.n_x(), m.n_w(), m.n_z()))
    }

    fn validate(&self) -> Result<()> {
        let expected: usize = self.points_per_dim.iter().product();
        ensure_dim("grid size", expected, self.points.len())?;
        ensure_dim(
            "matrices per grid point",
            self.points.len(),
            self.matrices.len(),
        )?;
        let (n_x, n_w, n_z) = self.dims().unwrap_or((0, 0, 0));
        for (p, m) in self.points.iter().zip(&self.matrices) {
            if !self.region.contains(p) {
                return Err(Error::InvalidArgument(format!(
                    "grid point {p:?} outside region"
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite {
                    what: "embedding matrices",
                    point: p.clone(),
                });
            }
            ensure_dim("embedding n_x", n_x, m.n_x())?;
            ensure_dim("embedding n_w", n_w, m.n_w())?;
            ensure_dim("embedding n_z", n_z, m.n_z())?;
        }
        Ok(())
    }

    /// Keep only grid points that also belong to the coarser equidistant
    /// grid with `coarse` points per dimension. Needs `(fine - 1)` to be a
    /// multiple of `(coarse - 1)` in every dimension.
    pub fn subgrid(&self, coarse: &[usize]) -> Result<GriddedEmbedding> {
        ensure_dim("subgrid counts", self.points_per_dim.len(), coarse.len())?;
        let mut strides = Vec::with_capacity(coarse.len());
        for (&f, &c) in self.points_per_dim.iter().zip(coarse) {
            let ok = c >= 2 && f >= 2 && (f - 1) % (c - 1) == 0;
            if !(ok || (c == 1 && f == 1)) {
                return Err(Error::InvalidArgument(format!(
                    "{c} points is not a subgrid of {f} points"
                )));
            }
            strides.push(if c == 1 { 1 } else { (f - 1) / (c - 1) });
        }
        let mut keep_points = Vec::new();
        let mut keep_mats = Vec::new();
        for (flat, (p, m)) in self.points.iter().zip(&self.matrices).enumerate() {
            let mut rem = flat;
            let mut on = true;
            for d in (0..coarse.len()).rev() {
                let n = self.points_per_dim[d];
                if !(rem % n).is_multiple_of(strides[d]) {
                    on = false;
                }
                rem /= n;
            }
            if on {
                keep_points.push(p.clone());
                keep_mats.push(m.clone());
            }
        }
        Ok(GriddedEmbedding {
            region: self.region.clone(),
            points_per_dim: coarse.to_vec(),
            points: keep_points,
            matrices: keep_mats,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EmbeddingJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: EmbeddingJson = serde_json::from_str(s)?;
        j.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout: `{"region": {"lower", "upper"}, "points_per_dim",
/// "points": [[...]], "matrices": [{"a","b","c","d"}]}` with row-major
/// matrices (see [`MatrixJson`]).
#[derive(Serialize, Deserialize)]
struct EmbeddingJson {
    region: BoxRegion,
    points_per_dim: Vec<usize>,
    points: Vec<PointJson>,
    matrices: Vec<MatsJson>,
}

#[derive(Serialize, Deserialize)]
struct PointJson(#[serde(with = "vec_f64_17")] Vec<f64>);

#[derive(Serialize, Deserialize)]
struct MatsJson {
    a: MatrixJson,
    b: MatrixJson,
    c: MatrixJson,
    d: MatrixJson,
}

impl From<&GriddedEmbedding> for EmbeddingJson {
    fn from(e: &GriddedEmbedding) -> Self {
        EmbeddingJson {
            region: e.region.clone(),
            points_per_dim: e.points_per_dim.clone(),
            points: e.points.iter().map(|p| PointJson(p.clone())).collect(),
            matrices: e
                .matrices
                .iter()
                .map(|m| MatsJson {
                    a: (&m.a).into(),
                    b: (&m.b).into(),
                    c: (&m.c).into(),
                    d: (&m.d).into(),
                })
                .collect(),
        }
    }
}

impl TryFrom<EmbeddingJson> for GriddedEmbedding {
    type Error = Error;
    fn try_from(j: EmbeddingJson) -> Result<Self> {
        let matrices = j
            .matrices
            .iter()
            .map(|m| {
                DifferentialMatrices::new(
                    m.a.to_matrix()?,
                    m.b.to_matrix()?,
                    m.c.to_matrix()?,
                    m.d.to_matrix()?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let emb = GriddedEmbedding {
            region: j.region,
            points_per_dim: j.points_per_dim,
            points: j.points.into_iter().map(|p| p.0).collect(),
            matrices,
        };
        emb.validate()?;
        Ok(emb)
    }
}
