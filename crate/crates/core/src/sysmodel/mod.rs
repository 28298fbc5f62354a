//! System model: discrete- and continuous-time nonlinear systems, their
//! differential form, RK4 discretization and feedback interconnection.

mod interconnect;
mod rk4;

pub use interconnect::{feedback_interconnect, ClosedLoop, ControllerGains, LtiController};
pub use rk4::{rk4_discretize, rk4_step, Rk4System};

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};

/// Jacobians of `f` and `h` at one operating point:
/// `a = df/dx`, `b = df/dw`, `c = dh/dx`, `d = dh/dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl DifferentialMatrices {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n_x = a.nrows();
        ensure_dim("A columns", n_x, a.ncols())?;
        ensure_dim("B rows", n_x, b.nrows())?;
        ensure_dim("C columns", n_x, c.ncols())?;
        ensure_dim("D rows", c.nrows(), d.nrows())?;
        ensure_dim("D columns", b.ncols(), d.ncols())?;
        Ok(Self { a, b, c, d })
    }

    /// Scalar shorthand used throughout the tests and examples.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64) -> Self {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self {
            a: m(a),
            b: m(b),
            c: m(c),
            d: m(d),
        }
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_finite(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// One step of the differential form: `(A dx + B dw, C dx + D dw)`.
    pub fn apply(&self, dx: &DVector<f64>, dw: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.a * dx + &self.b * dw, &self.c * dx + &self.d * dw)
    }
}

/// `x(k+1) = f(x(k), w(k))`, `z(k) = h(x(k), w(k))`.
///
/// Implementations must be pure: analyses evaluate one system from many
/// worker threads at once.
pub trait DiscreteTimeSystem: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_w(&self) -> usize;
    fn n_z(&self) -> usize;

    /// `f(x, w)`. Callers have checked dimensions.
    fn next_state(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;

    /// `h(x, w)`. Callers have checked dimensions.
    fn output(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;

    /// Closed-form Jacobians, when the system knows them.
    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<DifferentialMatrices> {
        None
    }
}

impl<S: DiscreteTimeSystem + ?Sized> DiscreteTimeSystem for Box<S> {
    fn n_x(&self) -> usize {
        (**self).n_x()
    }
    fn n_w(&self) -> usize {
        (**self).n_w()
    }
    fn n_z(&self) -> usize {
        (**self).n_z()
    }
    fn next_state(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        (**self).next_state(x, w)
    }
    fn output(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        (**self).output(x, w)
    }
    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Option<DifferentialMatrices> {
        (**self).analytic_jacobians(x, w)
    }
}

impl<S: DiscreteTimeSystem + ?Sized> DiscreteTimeSystem for std::sync::Arc<S> {
    fn n_x(&self) -> usize {
        (**self).n_x()
    }
    fn n_w(&self) -> usize {
        (**self).n_w()
    }
    fn n_z(&self) -> usize {
        (**self).n_z()
    }
    fn next_state(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        (**self).next_state(x, w)
    }
    fn output(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        (**self).output(x, w)
    }
    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Option<DifferentialMatrices> {
        (**self).analytic_jacobians(x, w)
    }
}

/// `x' = f_c(x, u)` in continuous time.
pub trait ContinuousTimeSystem: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `(df_c/dx, df_c/du)` if known in closed form.
    fn jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

type VecMap = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacMap = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DifferentialMatrices + Send + Sync>;

/// A discrete-time system assembled from closures.
pub struct FnSystem {
    n_x: usize,
    n_w: usize,
    n_z: usize,
    f: VecMap,
    h: VecMap,
    jac: Option<JacMap>,
}

impl FnSystem {
    pub fn new<F, H>(n_x: usize, n_w: usize, n_z: usize, f: F, h: H) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            n_x,
            n_w,
            n_z,
            f: Box::new(f),
            h: Box::new(h),
            jac: None,
        }
    }

    pub fn with_jacobians<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>, &DVector<f64>) -> DifferentialMatrices + Send + Sync + 'static,
    {
        self.jac = Some(Box::new(jac));
        self
    }

    /// The LTI system `(A, B, C, D)`, with its constant Jacobians attached.
    pub fn linear(mats: DifferentialMatrices) -> Self {
        let (n_x, n_w, n_z) = (mats.n_x(), mats.n_w(), mats.n_z());
        let (a, b, c, d) = (
            mats.a.clone(),
            mats.b.clone(),
            mats.c.clone(),
            mats.d.clone(),
        );
        FnSystem::new(
            n_x,
            n_w,
            n_z,
            move |x, w| &a * x + &b * w,
            move |x, w| &c * x + &d * w,
        )
        .with_jacobians(move |_, _| mats.clone())
    }
}

impl DiscreteTimeSystem for FnSystem {
    fn n_x(&self) -> usize {
        self.n_x
    }
    fn n_w(&self) -> usize {
        self.n_w
    }
    fn n_z(&self) -> usize {
        self.n_z
    }
    fn next_state(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, w)
    }
    fn output(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        (self.h)(x, w)
    }
    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Option<DifferentialMatrices> {
        self.jac.as_ref().map(|j| j(x, w))
    }
}

type CtMap = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A continuous-time system assembled from a closure.
pub struct FnContinuousSystem {
    n_x: usize,
    n_u: usize,
    f_c: CtMap,
}

impl FnContinuousSystem {
    pub fn new<F>(n_x: usize, n_u: usize, f_c: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            n_x,
            n_u,
            f_c: Box::new(f_c),
        }
    }
}

impl ContinuousTimeSystem for FnContinuousSystem {
    fn n_x(&self) -> usize {
        self.n_x
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f_c)(x, u)
    }
}

/// Checked evaluation: returns `(f(x, w), h(x, w))`.
pub fn evaluate<S: DiscreteTimeSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_dim("evaluate: state", sys.n_x(), x.len())?;
    ensure_dim("evaluate: input", sys.n_w(), w.len())?;
    let next = sys.next_state(x, w);
    let out = sys.output(x, w);
    ensure_dim("evaluate: f result", sys.n_x(), next.len())?;
    ensure_dim("evaluate: h result", sys.n_z(), out.len())?;
    Ok((next, out))
}

/// Default central-difference step for coordinate value `v`.
pub fn default_fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Jacobians at `(x, w)`: analytic when the system provides them, central
/// differences otherwise. `fd_step` overrides the default per-coordinate
/// step `1e-6 * max(1, |v_i|)`.
pub fn jacobians<S: DiscreteTimeSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    w: &DVector<f64>,
    fd_step: Option<f64>,
) -> Result<DifferentialMatrices> {
    ensure_dim("jacobians: state", sys.n_x(), x.len())?;
    ensure_dim("jacobians: input", sys.n_w(), w.len())?;
    let mats = match sys.analytic_jacobians(x, w) {
        Some(m) => {
            ensure_dim("analytic A rows", sys.n_x(), m.n_x())?;
            ensure_dim("analytic B columns", sys.n_w(), m.n_w())?;
            ensure_dim("analytic C rows", sys.n_z(), m.n_z())?;
            m
        }
        None => return fd_jacobians(sys, x, w, fd_step),
    };
    check_finite(mats, x, w)
}

/// Central finite-difference Jacobians, ignoring any analytic provider.
pub fn fd_jacobians<S: DiscreteTimeSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    w: &DVector<f64>,
    fd_step: Option<f64>,
) -> Result<DifferentialMatrices> {
    ensure_dim("fd_jacobians: state", sys.n_x(), x.len())?;
    ensure_dim("fd_jacobians: input", sys.n_w(), w.len())?;
    if let Some(h) = fd_step {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fd_step must be positive, got {h}"
            )));
        }
    }
    let (n_x, n_w, n_z) = (sys.n_x(), sys.n_w(), sys.n_z());
    let mut a = DMatrix::zeros(n_x, n_x);
    let mut b = DMatrix::zeros(n_x, n_w);
    let mut c = DMatrix::zeros(n_z, n_x);
    let mut d = DMatrix::zeros(n_z, n_w);

    for i in 0..n_x {
        let h = fd_step.unwrap_or_else(|| default_fd_step(x[i]));
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let span = xp[i] - xm[i];
        let df = (sys.next_state(&xp, w) - sys.next_state(&xm, w)) / span;
        let dh = (sys.output(&xp, w) - sys.output(&xm, w)) / span;
        a.set_column(i, &df);
        c.set_column(i, &dh);
    }
    for j in 0..n_w {
        let h = fd_step.unwrap_or_else(|| default_fd_step(w[j]));
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[j] += h;
        wm[j] -= h;
        let span = wp[j] - wm[j];
        let df = (sys.next_state(x, &wp) - sys.next_state(x, &wm)) / span;
        let dh = (sys.output(x, &wp) - sys.output(x, &wm)) / span;
        b.set_column(j, &df);
        d.set_column(j, &dh);
    }
    check_finite(DifferentialMatrices { a, b, c, d }, x, w)
}

fn check_finite(
    mats: DifferentialMatrices,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DifferentialMatrices> {
    if mats.is_finite() {
        Ok(mats)
    } else {
        Err(Error::NonFinite {
            what: "Jacobian",
            point: x.iter().chain(w.iter()).copied().collect(),
        })
    }
}
