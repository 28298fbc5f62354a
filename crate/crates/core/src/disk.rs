//! Unbalanced disk driven by a DC motor, with an integrating PID-like
//! controller in LTI and scheduled (LPV) variants.
//!
//! Plant: `x1' = x2`, `x2' = (M g l / J) sin(x1) - x2 / tau + (Km / tau) u`,
//! sampled with RK4. The closed loop has state `(x1, x2, x_c)`, disturbance
//! `w` added to the motor voltage and performance output `z = x1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{BoxRegion, Scheduling};
use crate::error::{Error, Result};
use crate::sysmodel::{
    feedback_interconnect, rk4_discretize, ClosedLoop, ContinuousTimeSystem, ControllerGains,
    LtiController, Rk4System,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskParameters {
    /// Mass (kg).
    pub m: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Pendulum length (m).
    pub l: f64,
    /// Disk inertia (kg m^2).
    pub j: f64,
    /// Motor constant.
    pub km: f64,
    /// Friction time constant (s).
    pub tau: f64,
    /// Sample time (s).
    pub ts: f64,
}

impl Default for DiskParameters {
    fn default() -> Self {
        Self {
            m: 0.076,
            g: 9.8,
            l: 0.041,
            j: 2.4e-4,
            km: 11.0,
            tau: 0.40,
            ts: 1.0 / 20.0,
        }
    }
}

impl DiskParameters {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.g, self.l, self.j, self.km, self.tau, self.ts];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "disk parameters must be positive: {self:?}"
            )))
        }
    }

    /// `M g l / J`.
    pub fn gravity_gain(&self) -> f64 {
        self.m * self.g * self.l / self.j
    }
}

/// Continuous-time disk model with input `u` (motor voltage).
#[derive(Debug, Clone, Copy)]
pub struct UnbalancedDisk {
    params: DiskParameters,
}

impl UnbalancedDisk {
    pub fn params(&self) -> &DiskParameters {
        &self.params
    }
}

pub fn unbalanced_disk_ct(params: DiskParameters) -> Result<UnbalancedDisk> {
    params.validate()?;
    Ok(UnbalancedDisk { params })
}

impl ContinuousTimeSystem for UnbalancedDisk {
    fn n_x(&self) -> usize {
        2
    }

    fn n_u(&self) -> usize {
        1
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        DVector::from_column_slice(&[
            x[1],
            p.gravity_gain() * x[0].sin() - x[1] / p.tau + p.km / p.tau * u[0],
        ])
    }

    fn jacobian(
        &self,
        x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let p = &self.params;
        Some((
            DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 1.0, p.gravity_gain() * x[0].cos(), -1.0 / p.tau],
            ),
            DMatrix::from_row_slice(2, 1, &[0.0, p.km / p.tau]),
        ))
    }
}

/// RK4-sampled disk. Jacobians by central differences.
pub fn disk_plant(params: DiskParameters) -> Result<Rk4System<UnbalancedDisk>> {
    rk4_discretize(unbalanced_disk_ct(params)?, params.ts)
}

fn controller_b() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 2, &[1.0, 0.0])
}

/// `x_c+ = x_c + x1`, `y_c = -0.5 x_c - 10 x1 - x2`.
pub fn lti_controller() -> LtiController {
    LtiController::constant(
        controller_b(),
        DMatrix::from_element(1, 1, -0.5),
        DMatrix::from_row_slice(1, 2, &[-10.0, -1.0]),
    )
    .expect("consistent controller dimensions")
}

/// Gains `C_c = -0.5 - sin(x1) / 20`, `D_c = [-10 - 2 cos(x1), -1]`.
pub fn lpv_controller() -> LtiController {
    LtiController::scheduled(
        controller_b(),
        1,
        0,
        |r: f64| {
            (
                DMatrix::from_element(1, 1, -0.5 - r.sin() / 20.0),
                DMatrix::from_row_slice(1, 2, &[-10.0 - 2.0 * r.cos(), -1.0]),
            )
        },
        |r: f64| {
            (
                DMatrix::from_element(1, 1, -r.cos() / 20.0),
                DMatrix::from_row_slice(1, 2, &[2.0 * r.sin(), 0.0]),
            )
        },
    )
    .expect("consistent controller dimensions")
}

/// `x1 in [-pi, pi]`, `x2 in [-10, 10]`, `u in [-10, 10]`.
pub fn disk_region() -> BoxRegion {
    use std::f64::consts::PI;
    BoxRegion::new(vec![(-PI, PI), (-10.0, 10.0), (-10.0, 10.0)]).expect("valid box")
}

/// Disturbance range covered by the embedding of a scheduled loop. It
/// contains the saturated ramp `w(k) = -min(k, 70)`.
pub const DISTURBANCE_BOUND: f64 = 70.0;

pub type DiskLoop = ClosedLoop<Rk4System<UnbalancedDisk>>;

pub fn lti_closed_loop(params: DiskParameters) -> Result<DiskLoop> {
    feedback_interconnect(disk_plant(params)?, lti_controller())
}

pub fn lpv_closed_loop(params: DiskParameters) -> Result<DiskLoop> {
    feedback_interconnect(disk_plant(params)?, lpv_controller())
}

/// Scheduling `rho = (x1, x2, u)` with `u` the motor voltage, extended with
/// `w` when the controller gains are scheduled.
///
/// With constant gains the differential form depends on `(x1, x2, u)` only,
/// and the lift takes `w = 0`. Scheduled gains add the term
/// `C_c'(x1) x_c` to the differential form, so `x_c` must be recoverable
/// from `rho`; the fourth coordinate `w` fixes it through
/// `u = C_c x_c + D_c x_p + w`.
#[derive(Debug, Clone)]
pub struct DiskScheduling {
    ctrl: LtiController,
    with_disturbance: bool,
}

impl DiskScheduling {
    pub fn new(ctrl: LtiController) -> Result<Self> {
        if ctrl.n_xc() != 1 || ctrl.n_uc() != 2 || ctrl.n_yc() != 1 {
            return Err(Error::InvalidArgument(
                "disk scheduling needs a one-state, two-input, one-output controller".into(),
            ));
        }
        let with_disturbance = matches!(ctrl.gains_kind(), ControllerGains::Scheduled { .. });
        Ok(Self {
            ctrl,
            with_disturbance,
        })
    }

    pub fn for_loop(cl: &DiskLoop) -> Result<Self> {
        Self::new(cl.controller().clone())
    }

    /// [`disk_region`], extended with `w in [-DISTURBANCE_BOUND,
    /// DISTURBANCE_BOUND]` for scheduled gains.
    pub fn region(&self) -> BoxRegion {
        let mut bounds = disk_region().intervals().to_vec();
        if self.with_disturbance {
            bounds.push((-DISTURBANCE_BOUND, DISTURBANCE_BOUND));
        }
        BoxRegion::new(bounds).expect("valid box")
    }

    /// `n` grid points in every scheduling dimension.
    pub fn uniform_grid(&self, n: usize) -> Vec<usize> {
        vec![n; self.n_rho()]
    }
}

impl Scheduling for DiskScheduling {
    fn n_rho(&self) -> usize {
        if self.with_disturbance {
            4
        } else {
            3
        }
    }

    fn schedule(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let xp = x.rows(0, 2).into_owned();
        let xc = x.rows(2, 1).into_owned();
        let u = self.ctrl.output(&xc, &xp)[0] + w[0];
        let mut rho = vec![x[0], x[1], u];
        if self.with_disturbance {
            rho.push(w[0]);
        }
        DVector::from_vec(rho)
    }

    fn lift(&self, rho: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let xp = DVector::from_column_slice(&rho[..2]);
        let w = if self.with_disturbance { rho[3] } else { 0.0 };
        let (c, d) = self.ctrl.gains_at(&xp);
        let xc = (rho[2] - w - (d * &xp)[0]) / c[(0, 0)];
        (
            DVector::from_column_slice(&[rho[0], rho[1], xc]),
            DVector::from_element(1, w),
        )
    }
}

/// `w(k) = 0` for `k < horizon`.
pub fn regulation_inputs(horizon: usize) -> Vec<DVector<f64>> {
    vec![DVector::zeros(1); horizon]
}

/// `w(k) = scale * min(k, k_sat)`.
pub fn ramp_sat_inputs(scale: f64, k_sat: usize, horizon: usize) -> Vec<DVector<f64>> {
    (0..horizon)
        .map(|k| DVector::from_element(1, scale * k.min(k_sat) as f64))
        .collect()
}
