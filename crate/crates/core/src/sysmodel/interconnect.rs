use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{DifferentialMatrices, DiscreteTimeSystem};
use crate::error::{ensure_dim, Error, Result};

type GainFn = Arc<dyn Fn(f64) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync>;

/// Output gains of the controller `y_c = C_c x_c + D_c u_c`.
#[derive(Clone)]
pub enum ControllerGains {
    Constant {
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    },
    /// Gains depending on one controller input entry `rho = u_c[index]`.
    /// `gains(rho)` returns `(C_c, D_c)`, `slopes(rho)` their derivatives.
    Scheduled {
        index: usize,
        gains: GainFn,
        slopes: GainFn,
    },
}

impl std::fmt::Debug for ControllerGains {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerGains::Constant { c, d } => f
                .debug_struct("Constant")
                .field("c", c)
                .field("d", d)
                .finish(),
            ControllerGains::Scheduled { index, .. } => f
                .debug_struct("Scheduled")
                .field("index", index)
                .finish_non_exhaustive(),
        }
    }
}

/// Controller with integrating state: `x_c+ = x_c + B_c u_c`,
/// `y_c = C_c(rho) x_c + D_c(rho) u_c`.
#[derive(Debug, Clone)]
pub struct LtiController {
    b_c: DMatrix<f64>,
    n_y: usize,
    gains: ControllerGains,
}

impl LtiController {
    pub fn constant(b_c: DMatrix<f64>, c_c: DMatrix<f64>, d_c: DMatrix<f64>) -> Result<Self> {
        ensure_dim("C_c columns", b_c.nrows(), c_c.ncols())?;
        ensure_dim("D_c columns", b_c.ncols(), d_c.ncols())?;
        ensure_dim("D_c rows", c_c.nrows(), d_c.nrows())?;
        Ok(Self {
            n_y: c_c.nrows(),
            b_c,
            gains: ControllerGains::Constant { c: c_c, d: d_c },
        })
    }

    pub fn scheduled<G, D>(
        b_c: DMatrix<f64>,
        n_y: usize,
        index: usize,
        gains: G,
        slopes: D,
    ) -> Result<Self>
    where
        G: Fn(f64) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync + 'static,
        D: Fn(f64) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync + 'static,
    {
        if index >= b_c.ncols() {
            return Err(Error::InvalidArgument(format!(
                "scheduling index {index} out of range for {} controller inputs",
                b_c.ncols()
            )));
        }
        let (c0, d0) = gains(0.0);
        ensure_dim("C_c(rho) rows", n_y, c0.nrows())?;
        ensure_dim("C_c(rho) columns", b_c.nrows(), c0.ncols())?;
        ensure_dim("D_c(rho) columns", b_c.ncols(), d0.ncols())?;
        Ok(Self {
            b_c,
            n_y,
            gains: ControllerGains::Scheduled {
                index,
                gains: Arc::new(gains),
                slopes: Arc::new(slopes),
            },
        })
    }

    pub fn n_xc(&self) -> usize {
        self.b_c.nrows()
    }

    pub fn n_uc(&self) -> usize {
        self.b_c.ncols()
    }

    pub fn n_yc(&self) -> usize {
        self.n_y
    }

    pub fn b_c(&self) -> &DMatrix<f64> {
        &self.b_c
    }

    pub fn gains_kind(&self) -> &ControllerGains {
        &self.gains
    }

    /// `(C_c, D_c)` at the scheduling value implied by `u_c`.
    pub fn gains_at(&self, uc: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.gains {
            ControllerGains::Constant { c, d } => (c.clone(), d.clone()),
            ControllerGains::Scheduled { index, gains, .. } => gains(uc[*index]),
        }
    }

    pub fn next_state(&self, xc: &DVector<f64>, uc: &DVector<f64>) -> DVector<f64> {
        xc + &self.b_c * uc
    }

    pub fn output(&self, xc: &DVector<f64>, uc: &DVector<f64>) -> DVector<f64> {
        let (c, d) = self.gains_at(uc);
        c * xc + d * uc
    }

    /// `(dy_c/dx_c, dy_c/du_c)`, including the derivative of scheduled gains.
    pub fn output_jacobian(
        &self,
        xc: &DVector<f64>,
        uc: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.gains {
            ControllerGains::Constant { c, d } => (c.clone(), d.clone()),
            ControllerGains::Scheduled {
                index,
                gains,
                slopes,
            } => {
                let rho = uc[*index];
                let (c, d) = gains(rho);
                let (dc, dd) = slopes(rho);
                let extra = dc * xc + dd * uc;
                let mut du = d;
                let mut col = du.column_mut(*index);
                col += extra;
                (c, du)
            }
        }
    }
}

/// Plant in feedback with an [`LtiController`].
///
/// Closed-loop state `(x_p, x_c)`, generalized disturbance `w` added to the
/// plant input (`u = y_c + w`), controller input `u_c = x_p`, performance
/// output `z = E x_p` (by default the first plant state).
pub struct ClosedLoop<P> {
    plant: P,
    ctrl: LtiController,
    perf: DMatrix<f64>,
}

pub fn feedback_interconnect<P: DiscreteTimeSystem>(
    plant: P,
    ctrl: LtiController,
) -> Result<ClosedLoop<P>> {
    ensure_dim("controller input vs plant state", plant.n_x(), ctrl.n_uc())?;
    ensure_dim("controller output vs plant input", plant.n_w(), ctrl.n_yc())?;
    let mut perf = DMatrix::zeros(1, plant.n_x());
    perf[(0, 0)] = 1.0;
    Ok(ClosedLoop { plant, ctrl, perf })
}

impl<P: DiscreteTimeSystem> ClosedLoop<P> {
    /// Replace the performance selector `E` in `z = E x_p`.
    pub fn with_performance(mut self, perf: DMatrix<f64>) -> Result<Self> {
        ensure_dim(
            "performance selector columns",
            self.plant.n_x(),
            perf.ncols(),
        )?;
        self.perf = perf;
        Ok(self)
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn controller(&self) -> &LtiController {
        &self.ctrl
    }

    pub fn n_plant(&self) -> usize {
        self.plant.n_x()
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let np = self.plant.n_x();
        (
            x.rows(0, np).into_owned(),
            x.rows(np, self.ctrl.n_xc()).into_owned(),
        )
    }

    /// Plant input `u = y_c(x_c, x_p) + w`.
    pub fn plant_input(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let (xp, xc) = self.split(x);
        self.ctrl.output(&xc, &xp) + w
    }
}

impl<P: DiscreteTimeSystem> DiscreteTimeSystem for ClosedLoop<P> {
    fn n_x(&self) -> usize {
        self.plant.n_x() + self.ctrl.n_xc()
    }
    fn n_w(&self) -> usize {
        self.plant.n_w()
    }
    fn n_z(&self) -> usize {
        self.perf.nrows()
    }

    fn next_state(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let (xp, xc) = self.split(x);
        let u = self.ctrl.output(&xc, &xp) + w;
        let xp_next = self.plant.next_state(&xp, &u);
        let xc_next = self.ctrl.next_state(&xc, &xp);
        DVector::from_iterator(self.n_x(), xp_next.iter().chain(xc_next.iter()).copied())
    }

    fn output(&self, x: &DVector<f64>, _w: &DVector<f64>) -> DVector<f64> {
        &self.perf * x.rows(0, self.plant.n_x())
    }

    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Option<DifferentialMatrices> {
        let (xp, xc) = self.split(x);
        let u = self.ctrl.output(&xc, &xp) + w;
        let plant = self.plant.analytic_jacobians(&xp, &u)?;
        let (gx, gu) = self.ctrl.output_jacobian(&xc, &xp);
        let (np, nc, nw) = (self.plant.n_x(), self.ctrl.n_xc(), self.plant.n_w());
        let n = np + nc;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (np, np))
            .copy_from(&(&plant.a + &plant.b * &gu));
        a.view_mut((0, np), (np, nc)).copy_from(&(&plant.b * &gx));
        a.view_mut((np, 0), (nc, np)).copy_from(self.ctrl.b_c());
        a.view_mut((np, np), (nc, nc))
            .copy_from(&DMatrix::identity(nc, nc));
        let mut b = DMatrix::zeros(n, nw);
        b.view_mut((0, 0), (np, nw)).copy_from(&plant.b);
        let mut c = DMatrix::zeros(self.perf.nrows(), n);
        c.view_mut((0, 0), (self.perf.nrows(), np))
            .copy_from(&self.perf);
        let d = DMatrix::zeros(self.perf.nrows(), nw);
        Some(DifferentialMatrices { a, b, c, d })
    }
}
