//! Incremental dissipativity analysis for discrete-time nonlinear systems.
//!
//! A system `x(k+1) = f(x, w)`, `z = h(x, w)` is certified incrementally
//! (Q,S,R)-dissipative on a box region by gridding its differential form
//! (the Jacobians of `f` and `h`) and finding one quadratic storage matrix
//! `P` that satisfies the dissipation LMI at every grid point. Special
//! cases give incremental l2-gain bounds (with bisection on the gain) and
//! incremental passivity.
//!
//! The certificate is exact on the grid only. Between grid points it is the
//! usual gridding heuristic, and a failure to find `P` does not show that
//! the system lacks the property: the LMI conditions are sufficient only.
//!
//! Modules:
//! - [`sysmodel`]: system traits, Jacobians, RK4 discretization, feedback.
//! - [`embedding`]: box regions, grids and the gridded differential form.
//! - [`lmi`]: supplies, LMI assembly, the feasibility backend, gain bisection.
//! - [`sim`]: primal and differential simulation, empirical validation.
//! - [`disk`]: the unbalanced-disk case study with LTI and LPV controllers.

pub mod disk;
pub mod embedding;
mod error;
pub mod exec;
pub mod linalg;
pub mod lmi;
pub mod num17;
pub mod sim;
pub mod sysmodel;

pub use error::{Error, Result};
pub use exec::Execution;

pub use embedding::{generate_grid, BoxRegion, GriddedEmbedding, Scheduling, StateScheduling};
pub use lmi::{
    check_incremental_qsr, check_passivity, compute_li2_gain, GainOutcome, LmiProblem,
    StorageCertificate, SupplyQsr, Verdict,
};
pub use sim::{Trajectory, TrajectoryPair};
pub use sysmodel::{
    ContinuousTimeSystem, DifferentialMatrices, DiscreteTimeSystem, FnSystem, LtiController,
};
