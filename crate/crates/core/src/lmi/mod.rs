//! Incremental dissipativity LMIs over a gridded embedding.
//!
//! Three families are assembled per grid point, all sharing one storage
//! matrix across the whole grid:
//!
//! - (Q,S,R) dissipation, affine in `P`, required `<= 0`:
//!   `[I 0; A B]' diag(-P, P) [I 0; A B] - [0 I; C D]' [Q S; S' R] [0 I; C D]`
//! - l2-gain in Schur form, affine in `Pbar = gamma P^-1`, required `>= 0`:
//!   `[Pbar, A Pbar, B, 0; Pbar A', Pbar, 0, Pbar C'; B', 0, gamma I, D'; 0, C Pbar, D, gamma I]`
//! - passivity, affine in `P`, required `>= 0`:
//!   `[P, A' P, C'; P A, P, P B; C, B' P, D + D']`
//!
//! Feasibility goes through a pluggable [`Backend`]; [`InteriorPointBackend`] is
//! the bundled one. An infeasible verdict means no certificate was found at
//! the requested tolerance. The conditions are sufficient only, so it is not
//! evidence that the system lacks the property.

mod certificate;
mod ipm;
mod problem;

pub use certificate::{AnalysisKind, StorageCertificate};
pub use ipm::InteriorPointBackend;
pub use problem::{AffineBlock, LmiProblem, Sense, SymmetricVar};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::GriddedEmbedding;
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::linalg::{block, is_symmetric, max_abs, max_eigenvalue, quad};
use crate::num17::matrix_17;
use crate::sysmodel::DifferentialMatrices;

/// Quadratic supply `s = [dw; dz]' [Q S; S' R] [dw; dz]` on signal differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyQsr {
    #[serde(with = "matrix_17")]
    q: DMatrix<f64>,
    #[serde(with = "matrix_17")]
    s: DMatrix<f64>,
    #[serde(with = "matrix_17")]
    r: DMatrix<f64>,
}

impl SupplyQsr {
    /// Validates shapes, symmetry of `Q` and `R` (to 1e-12), and that `R` is
    /// negative definite or zero.
    pub fn new(q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        ensure_dim("Q columns", q.nrows(), q.ncols())?;
        ensure_dim("R columns", r.nrows(), r.ncols())?;
        ensure_dim("S rows", q.nrows(), s.nrows())?;
        ensure_dim("S columns", r.nrows(), s.ncols())?;
        if !is_symmetric(&q, 1e-12) || !is_symmetric(&r, 1e-12) {
            return Err(Error::InvalidArgument("Q and R must be symmetric".into()));
        }
        let r_zero = max_abs(&r) == 0.0;
        if !r_zero && max_eigenvalue(&r) >= 0.0 {
            return Err(Error::InvalidArgument(
                "R must be negative definite or zero".into(),
            ));
        }
        Ok(Self { q, s, r })
    }

    /// `Q = gamma^2 I`, `S = 0`, `R = -I`.
    pub fn l2_gain(gamma: f64, n_w: usize, n_z: usize) -> Self {
        Self {
            q: DMatrix::identity(n_w, n_w) * (gamma * gamma),
            s: DMatrix::zeros(n_w, n_z),
            r: -DMatrix::identity(n_z, n_z),
        }
    }

    /// Supply `dw' dz + dz' dw`: `Q = 0`, `S = I`, `R = 0`.
    pub fn passivity(n: usize) -> Self {
        Self {
            q: DMatrix::zeros(n, n),
            s: DMatrix::identity(n, n),
            r: DMatrix::zeros(n, n),
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn n_w(&self) -> usize {
        self.q.nrows()
    }
    pub fn n_z(&self) -> usize {
        self.r.nrows()
    }

    /// Supply value for input difference `dw` and output difference `dz`.
    pub fn evaluate(&self, dw: &DVector<f64>, dz: &DVector<f64>) -> f64 {
        quad(&self.q, dw) + 2.0 * dw.dot(&(&self.s * dz)) + quad(&self.r, dz)
    }
}

/// Value of the (Q,S,R) dissipation block at a given `P`.
pub fn incremental_qsr_block(
    mats: &DifferentialMatrices,
    supply: &SupplyQsr,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (nx, nw) = (mats.n_x(), mats.n_w());
    let top = block(&[
        vec![DMatrix::identity(nx, nx), DMatrix::zeros(nx, nw)],
        vec![mats.a.clone(), mats.b.clone()],
    ]);
    let store = block(&[
        vec![-p.clone(), DMatrix::zeros(nx, nx)],
        vec![DMatrix::zeros(nx, nx), p.clone()],
    ]);
    let bottom = block(&[
        vec![DMatrix::zeros(nw, nx), DMatrix::identity(nw, nw)],
        vec![mats.c.clone(), mats.d.clone()],
    ]);
    let qsr = block(&[
        vec![supply.q.clone(), supply.s.clone()],
        vec![supply.s.transpose(), supply.r.clone()],
    ]);
    let m = top.transpose() * store * top - bottom.transpose() * qsr * bottom;
    crate::linalg::symmetrize(&m)
}

/// Value of the Schur-form l2-gain block at a given `Pbar`.
pub fn li2_schur_block(
    mats: &DifferentialMatrices,
    gamma: f64,
    p_bar: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (nx, nw, nz) = (mats.n_x(), mats.n_w(), mats.n_z());
    let ap = &mats.a * p_bar;
    let cp = &mats.c * p_bar;
    block(&[
        vec![
            p_bar.clone(),
            ap.clone(),
            mats.b.clone(),
            DMatrix::zeros(nx, nz),
        ],
        vec![
            ap.transpose(),
            p_bar.clone(),
            DMatrix::zeros(nx, nw),
            cp.transpose(),
        ],
        vec![
            mats.b.transpose(),
            DMatrix::zeros(nw, nx),
            DMatrix::identity(nw, nw) * gamma,
            mats.d.transpose(),
        ],
        vec![
            DMatrix::zeros(nz, nx),
            cp,
            mats.d.clone(),
            DMatrix::identity(nz, nz) * gamma,
        ],
    ])
}

/// Value of the passivity block at a given `P`.
pub fn passivity_block(mats: &DifferentialMatrices, p: &DMatrix<f64>) -> DMatrix<f64> {
    let pa = p * &mats.a;
    let pb = p * &mats.b;
    block(&[
        vec![p.clone(), pa.transpose(), mats.c.transpose()],
        vec![pa, p.clone(), pb.clone()],
        vec![mats.c.clone(), pb.transpose(), &mats.d + mats.d.transpose()],
    ])
}

/// (Q,S,R) dissipation block as an affine function of `P`, required `<= 0`.
pub fn assemble_incremental_qsr(
    mats: &DifferentialMatrices,
    supply: &SupplyQsr,
) -> Result<AffineBlock> {
    ensure_dim("supply n_w vs B columns", mats.n_w(), supply.n_w())?;
    ensure_dim("supply n_z vs C rows", mats.n_z(), supply.n_z())?;
    Ok(AffineBlock::from_affine_map(mats.n_x(), Sense::Nsd, |p| {
        incremental_qsr_block(mats, supply, p)
    }))
}

/// Schur-form l2-gain block as an affine function of `Pbar`, required `>= 0`.
pub fn assemble_li2_schur(mats: &DifferentialMatrices, gamma: f64) -> Result<AffineBlock> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(AffineBlock::from_affine_map(mats.n_x(), Sense::Psd, |p| {
        li2_schur_block(mats, gamma, p)
    }))
}

/// Passivity block as an affine function of `P`, required `>= 0`.
pub fn assemble_passivity(mats: &DifferentialMatrices) -> Result<AffineBlock> {
    ensure_dim("passivity needs n_w = n_z", mats.n_w(), mats.n_z())?;
    Ok(AffineBlock::from_affine_map(mats.n_x(), Sense::Psd, |p| {
        passivity_block(mats, p)
    }))
}

/// Knobs shared by every feasibility solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Allowed constraint violation: feasible means margin `>= -tol`.
    pub tol: f64,
    /// Positive-definite variables are kept `>= p_floor I`.
    pub p_floor: f64,
    /// Search is restricted to `|y| <= radius`.
    pub radius: f64,
    /// Margins above this value are not pursued.
    pub margin_cap: f64,
    /// Stop at the first strictly feasible iterate instead of maximizing
    /// the margin.
    pub stop_when_feasible: bool,
    pub max_iterations: usize,
    /// Relative duality-gap target when maximizing the margin.
    pub gap_tol: f64,
    pub exec: Execution,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            p_floor: 1e-6,
            radius: 1e6,
            margin_cap: 1.0,
            stop_when_feasible: false,
            max_iterations: 200,
            gap_tol: 1e-9,
            exec: Execution::default(),
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Decision vector in the problem's coordinate layout.
    pub y: Vec<f64>,
    /// Smallest eigenvalue over all blocks (PSD form) at `y`.
    pub margin: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleInfo {
    /// Best margin reached.
    pub best_margin: f64,
    /// Upper bound on the achievable margin inside the search radius.
    pub margin_upper_bound: f64,
    /// True when the bound proves that no point inside the search radius
    /// has margin `>= -tol`; false when the solver merely stopped short.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Feasible(Solution),
    Infeasible(InfeasibleInfo),
    /// Numerical failure. Never reported as infeasible.
    Unsolved(String),
}

/// Semidefinite feasibility solver.
pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &LmiProblem, opts: &SolveOptions) -> Verdict;
}

/// Solve with the bundled backend and default options at tolerance `tol`.
pub fn solve_feasibility(problem: &LmiProblem, tol: f64) -> Verdict {
    InteriorPointBackend.solve(problem, &SolveOptions::with_tol(tol))
}

/// Result of a certificate search.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum CheckOutcome {
    Certified(StorageCertificate),
    NotCertified(InfeasibleInfo),
}

impl CheckOutcome {
    pub fn certificate(&self) -> Option<&StorageCertificate> {
        match self {
            CheckOutcome::Certified(c) => Some(c),
            CheckOutcome::NotCertified(_) => None,
        }
    }
}

fn non_empty(emb: &GriddedEmbedding) -> Result<(usize, usize, usize)> {
    emb.dims()
        .ok_or_else(|| Error::InvalidArgument("embedding has no grid points".into()))
}

fn build_problem<F>(emb: &GriddedEmbedding, name: &str, exec: Execution, f: F) -> Result<LmiProblem>
where
    F: Fn(&DifferentialMatrices) -> Result<AffineBlock> + Sync + Send,
{
    let (n_x, _, _) = non_empty(emb)?;
    let mut problem = LmiProblem::new();
    problem.add_symmetric(name, n_x, true);
    for blk in exec.map(&emb.matrices, f) {
        problem.add_block(blk?)?;
    }
    Ok(problem)
}

fn solver_status(backend: &dyn Backend, sol: &Solution) -> String {
    format!(
        "feasible ({}, {} Newton steps)",
        backend.name(),
        sol.iterations
    )
}

fn unsolved(msg: String) -> Error {
    Error::Unsolved(msg)
}

/// One shared `P` for the (Q,S,R) block at every grid point.
pub fn check_incremental_qsr(
    emb: &GriddedEmbedding,
    supply: &SupplyQsr,
    opts: &SolveOptions,
) -> Result<CheckOutcome> {
    check_incremental_qsr_with(&InteriorPointBackend, emb, supply, opts)
}

pub fn check_incremental_qsr_with(
    backend: &dyn Backend,
    emb: &GriddedEmbedding,
    supply: &SupplyQsr,
    opts: &SolveOptions,
) -> Result<CheckOutcome> {
    let problem = build_problem(emb, "P", opts.exec, |m| assemble_incremental_qsr(m, supply))?;
    match backend.solve(&problem, opts) {
        Verdict::Feasible(sol) => {
            let p = problem.symmetric[0].extract(&sol.y);
            Ok(CheckOutcome::Certified(StorageCertificate {
                analysis: AnalysisKind::Qsr,
                p,
                p_bar: None,
                gamma: None,
                supply: supply.clone(),
                region: emb.region.clone(),
                grid: emb.points_per_dim.clone(),
                margin: sol.margin,
                solver_status: solver_status(backend, &sol),
                seed: None,
            }))
        }
        Verdict::Infeasible(info) => Ok(CheckOutcome::NotCertified(info)),
        Verdict::Unsolved(msg) => Err(unsolved(msg)),
    }
}

/// One shared `P` for the passivity block at every grid point.
pub fn check_passivity(emb: &GriddedEmbedding, opts: &SolveOptions) -> Result<CheckOutcome> {
    check_passivity_with(&InteriorPointBackend, emb, opts)
}

pub fn check_passivity_with(
    backend: &dyn Backend,
    emb: &GriddedEmbedding,
    opts: &SolveOptions,
) -> Result<CheckOutcome> {
    let (_, n_w, n_z) = non_empty(emb)?;
    ensure_dim("passivity needs n_w = n_z", n_w, n_z)?;
    let problem = build_problem(emb, "P", opts.exec, assemble_passivity)?;
    match backend.solve(&problem, opts) {
        Verdict::Feasible(sol) => {
            let p = problem.symmetric[0].extract(&sol.y);
            Ok(CheckOutcome::Certified(StorageCertificate {
                analysis: AnalysisKind::Passivity,
                p,
                p_bar: None,
                gamma: None,
                supply: SupplyQsr::passivity(n_w),
                region: emb.region.clone(),
                grid: emb.points_per_dim.clone(),
                margin: sol.margin,
                solver_status: solver_status(backend, &sol),
                seed: None,
            }))
        }
        Verdict::Infeasible(info) => Ok(CheckOutcome::NotCertified(info)),
        Verdict::Unsolved(msg) => Err(unsolved(msg)),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GainOptions {
    pub bisect_tol: f64,
    pub gamma_cap: f64,
    pub solve: SolveOptions,
}

impl Default for GainOptions {
    fn default() -> Self {
        Self {
            bisect_tol: 1e-3,
            gamma_cap: 1e3,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum GainOutcome {
    Bounded {
        gamma: f64,
        certificate: StorageCertificate,
    },
    /// No certificate up to `gamma_cap`.
    Unbounded {
        gamma_cap: f64,
        info: InfeasibleInfo,
    },
}

/// Shared-storage Schur-form problem at a fixed gain.
///
/// The decision variable is `X = Pbar / gamma = P^-1` and every block is
/// the Schur block divided by `gamma`, which keeps the variable's scale
/// independent of the gain being probed. Recover `Pbar` as `gamma X`.
/// Margins of this problem are those of the Schur blocks divided by
/// `gamma`; [`li2_solve_options`] rescales tolerances to match.
pub fn li2_problem(emb: &GriddedEmbedding, gamma: f64, exec: Execution) -> Result<LmiProblem> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    build_problem(emb, "X", exec, |m| {
        Ok(AffineBlock::from_affine_map(m.n_x(), Sense::Psd, |x| {
            li2_schur_block(m, gamma, &(x * gamma)) / gamma
        }))
    })
}

/// Options for [`li2_problem`] at `gamma` under which `tol` and `p_floor`
/// keep their meaning for the Schur blocks in `Pbar`.
pub fn li2_solve_options(opts: &SolveOptions, gamma: f64) -> SolveOptions {
    SolveOptions {
        tol: opts.tol / gamma,
        p_floor: opts.p_floor / gamma,
        ..*opts
    }
}

/// Smallest certified incremental l2-gain on the grid, by bisection over
/// `(0, gamma_cap]` until the bracket is narrower than `bisect_tol`.
pub fn compute_li2_gain(emb: &GriddedEmbedding, opts: &GainOptions) -> Result<GainOutcome> {
    compute_li2_gain_with(&InteriorPointBackend, emb, opts)
}

pub fn compute_li2_gain_with(
    backend: &dyn Backend,
    emb: &GriddedEmbedding,
    opts: &GainOptions,
) -> Result<GainOutcome> {
    let (_, n_w, n_z) = non_empty(emb)?;
    if !(opts.bisect_tol > 0.0 && opts.gamma_cap > 0.0) {
        return Err(Error::InvalidArgument(
            "bisect_tol and gamma_cap must be positive".into(),
        ));
    }
    let probe_opts = SolveOptions {
        stop_when_feasible: true,
        ..opts.solve
    };
    let probe = |gamma: f64| -> Result<Verdict> {
        let problem = li2_problem(emb, gamma, opts.solve.exec)?;
        match backend.solve(&problem, &li2_solve_options(&probe_opts, gamma)) {
            Verdict::Unsolved(msg) => Err(unsolved(format!("at gamma = {gamma}: {msg}"))),
            Verdict::Feasible(sol) => Ok(Verdict::Feasible(Solution {
                margin: sol.margin * gamma,
                ..sol
            })),
            Verdict::Infeasible(info) => Ok(Verdict::Infeasible(InfeasibleInfo {
                best_margin: info.best_margin * gamma,
                margin_upper_bound: info.margin_upper_bound * gamma,
                ..info
            })),
        }
    };

    let mut best = match probe(opts.gamma_cap)? {
        Verdict::Feasible(sol) => sol,
        Verdict::Infeasible(info) => {
            return Ok(GainOutcome::Unbounded {
                gamma_cap: opts.gamma_cap,
                info,
            })
        }
        Verdict::Unsolved(_) => unreachable!(),
    };
    let (mut lo, mut hi) = (0.0, opts.gamma_cap);
    while hi - lo > opts.bisect_tol {
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Verdict::Feasible(sol) => {
                hi = mid;
                best = sol;
            }
            _ => lo = mid,
        }
        log::debug!("li2 bisection bracket [{lo}, {hi}]");
    }

    // Re-solve at the certified gain for a well-centered certificate.
    let problem = li2_problem(emb, hi, opts.solve.exec)?;
    let full_opts = SolveOptions {
        stop_when_feasible: false,
        ..opts.solve
    };
    if let Verdict::Feasible(sol) = backend.solve(&problem, &li2_solve_options(&full_opts, hi)) {
        if sol.margin * hi >= best.margin {
            best = Solution {
                margin: sol.margin * hi,
                ..sol
            };
        }
    }
    let x = problem.symmetric[0].extract(&best.y);
    let p_bar = &x * hi;
    let p = x
        .try_inverse()
        .ok_or_else(|| unsolved("certified storage matrix is singular".into()))?;
    let p = crate::linalg::symmetrize(&p);
    Ok(GainOutcome::Bounded {
        gamma: hi,
        certificate: StorageCertificate {
            analysis: AnalysisKind::Li2,
            p,
            p_bar: Some(p_bar),
            gamma: Some(hi),
            supply: SupplyQsr::l2_gain(hi, n_w, n_z),
            region: emb.region.clone(),
            grid: emb.points_per_dim.clone(),
            margin: best.margin,
            solver_status: solver_status(backend, &best),
            seed: None,
        },
    })
}
