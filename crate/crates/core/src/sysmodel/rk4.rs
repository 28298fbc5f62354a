use nalgebra::{DMatrix, DVector};

use super::{ContinuousTimeSystem, DifferentialMatrices, DiscreteTimeSystem};
use crate::error::{Error, Result};

/// Zero-order-hold RK4 discretization of a continuous-time system.
///
/// The output is the full state, so `n_z = n_x` and `h(x, u) = x`.
#[derive(Debug, Clone)]
pub struct Rk4System<C> {
    ct: C,
    ts: f64,
    analytic: bool,
}

pub fn rk4_discretize<C: ContinuousTimeSystem>(ct: C, ts: f64) -> Result<Rk4System<C>> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sample time must be positive, got {ts}"
        )));
    }
    Ok(Rk4System {
        ct,
        ts,
        analytic: false,
    })
}

/// One RK4 step of `x' = f_c(x, u)` with `u` held over the step.
pub fn rk4_step<C: ContinuousTimeSystem + ?Sized>(
    ct: &C,
    ts: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let k1 = ct.derivative(x, u);
    let k2 = ct.derivative(&(x + &k1 * (ts / 2.0)), u);
    let k3 = ct.derivative(&(x + &k2 * (ts / 2.0)), u);
    let k4 = ct.derivative(&(x + &k3 * ts), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0)
}

impl<C: ContinuousTimeSystem> Rk4System<C> {
    pub fn sample_time(&self) -> f64 {
        self.ts
    }

    pub fn continuous(&self) -> &C {
        &self.ct
    }

    /// Use the chain rule through the RK4 stages for Jacobians instead of
    /// finite differences. Needs `C::jacobian`; otherwise finite
    /// differences are still used.
    pub fn with_analytic_jacobians(mut self, on: bool) -> Self {
        self.analytic = on;
        self
    }

    /// `(dx+/dx, dx+/du)` by differentiating each stage.
    pub fn stage_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let (n, m, h) = (self.ct.n_x(), self.ct.n_u(), self.ts);
        let eye = DMatrix::<f64>::identity(n, n);
        let mut sum_x = DMatrix::zeros(n, n);
        let mut sum_u = DMatrix::zeros(n, m);
        let mut prev_k = DVector::zeros(n);
        let mut prev_jx = DMatrix::zeros(n, n);
        let mut prev_ju = DMatrix::zeros(n, m);
        for (stage, (offset, weight)) in [(0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)]
            .into_iter()
            .enumerate()
        {
            let xs = if stage == 0 {
                x.clone()
            } else {
                x + &prev_k * (offset * h)
            };
            let (fx, fu) = self.ct.jacobian(&xs, u)?;
            let (jx, ju) = if stage == 0 {
                (fx.clone(), fu)
            } else {
                (
                    &fx * (&eye + &prev_jx * (offset * h)),
                    &fx * &prev_ju * (offset * h) + fu,
                )
            };
            sum_x += &jx * weight;
            sum_u += &ju * weight;
            prev_k = self.ct.derivative(&xs, u);
            prev_jx = jx;
            prev_ju = ju;
        }
        Some((eye + sum_x * (h / 6.0), sum_u * (h / 6.0)))
    }
}

impl<C: ContinuousTimeSystem> DiscreteTimeSystem for Rk4System<C> {
    fn n_x(&self) -> usize {
        self.ct.n_x()
    }
    fn n_w(&self) -> usize {
        self.ct.n_u()
    }
    fn n_z(&self) -> usize {
        self.ct.n_x()
    }
    fn next_state(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        rk4_step(&self.ct, self.ts, x, w)
    }
    fn output(&self, x: &DVector<f64>, _w: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Option<DifferentialMatrices> {
        if !self.analytic {
            return None;
        }
        let (a, b) = self.stage_jacobians(x, w)?;
        let n = self.ct.n_x();
        Some(DifferentialMatrices {
            a,
            b,
            c: DMatrix::identity(n, n),
            d: DMatrix::zeros(n, self.ct.n_u()),
        })
    }
}
