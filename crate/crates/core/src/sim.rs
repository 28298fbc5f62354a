//! Primal and differential simulation, trajectory pairs, and empirical
//! checks of dissipation certificates.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{BoxRegion, Scheduling};
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::linalg::quad;
use crate::lmi::SupplyQsr;
use crate::sysmodel::{jacobians, DiscreteTimeSystem};

/// States `x(0..=N)`, inputs `w(0..N)` and outputs `z(0..N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    /// Set when the run stopped early on a non-finite value.
    pub truncated: Option<String>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_x(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn n_w(&self) -> usize {
        self.inputs.first().map_or(0, |w| w.len())
    }

    pub fn n_z(&self) -> usize {
        self.outputs.first().map_or(0, |z| z.len())
    }

    /// Largest deviation between the stored trajectory and a fresh
    /// step-by-step evaluation of `sys`.
    pub fn recheck<S: DiscreteTimeSystem + ?Sized>(&self, sys: &S) -> Result<f64> {
        let mut worst = 0.0f64;
        for k in 0..self.horizon() {
            let (next, out) = crate::sysmodel::evaluate(sys, &self.states[k], &self.inputs[k])?;
            worst = worst
                .max((next - &self.states[k + 1]).amax())
                .max((out - &self.outputs[k]).amax());
        }
        Ok(worst)
    }

    /// CSV with header `k,x1..xn,w1..wm,z1..zp`, one row per step `k < N`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.n_x()).map(|i| format!("x{i}")));
        header.extend((1..=self.n_w()).map(|i| format!("w{i}")));
        header.extend((1..=self.n_z()).map(|i| format!("z{i}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.horizon() {
            let mut row = vec![k.to_string()];
            for v in self.states[k]
                .iter()
                .chain(self.inputs[k].iter())
                .chain(self.outputs[k].iter())
            {
                row.push(format!("{v:.16e}"));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

/// Two trajectories of the same system over the same horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub first: Trajectory,
    pub second: Trajectory,
}

impl TrajectoryPair {
    pub fn new(first: Trajectory, second: Trajectory) -> Result<Self> {
        ensure_dim("pair horizon", first.horizon(), second.horizon())?;
        ensure_dim("pair state dimension", first.n_x(), second.n_x())?;
        ensure_dim("pair input dimension", first.n_w(), second.n_w())?;
        ensure_dim("pair output dimension", first.n_z(), second.n_z())?;
        Ok(Self { first, second })
    }
}

/// Iterate `x(k+1) = f(x, w)`, `z = h(x, w)` over `w_seq`.
///
/// A non-finite state or output ends the run early; the trajectory keeps the
/// finite prefix and records why in `truncated`.
pub fn simulate<S: DiscreteTimeSystem + ?Sized>(
    sys: &S,
    x0: &DVector<f64>,
    w_seq: &[DVector<f64>],
) -> Result<Trajectory> {
    ensure_dim("initial state", sys.n_x(), x0.len())?;
    for (k, w) in w_seq.iter().enumerate() {
        ensure_dim("input", sys.n_w(), w.len())?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite input at step {k}"
            )));
        }
    }
    let mut traj = Trajectory {
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(w_seq.len()),
        outputs: Vec::with_capacity(w_seq.len()),
        truncated: None,
    };
    for (k, w) in w_seq.iter().enumerate() {
        let x = &traj.states[k];
        let (next, out) = crate::sysmodel::evaluate(sys, x, w)?;
        if next.iter().chain(out.iter()).any(|v| !v.is_finite()) {
            traj.truncated = Some(format!("non-finite state or output at step {k}"));
            break;
        }
        traj.inputs.push(w.clone());
        traj.outputs.push(out);
        traj.states.push(next);
    }
    Ok(traj)
}

/// Variations `dx(0..=N)` and `dz(0..N)` of the differential form.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialTrajectory {
    pub dx: Vec<DVector<f64>>,
    pub dz: Vec<DVector<f64>>,
}

/// Propagate `dx(k+1) = A dx + B dw`, `dz = C dx + D dw` with the Jacobians
/// taken along `base`.
pub fn simulate_differential<S: DiscreteTimeSystem + ?Sized>(
    sys: &S,
    base: &Trajectory,
    dx0: &DVector<f64>,
    dw_seq: &[DVector<f64>],
) -> Result<DifferentialTrajectory> {
    ensure_dim("initial variation", sys.n_x(), dx0.len())?;
    ensure_dim("variation horizon", base.horizon(), dw_seq.len())?;
    let mut dx = vec![dx0.clone()];
    let mut dz = Vec::with_capacity(dw_seq.len());
    for (k, dw) in dw_seq.iter().enumerate() {
        ensure_dim("input variation", sys.n_w(), dw.len())?;
        let mats = jacobians(sys, &base.states[k], &base.inputs[k], None)?;
        let (next, out) = mats.apply(&dx[k], dw);
        if next.iter().chain(out.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "differential trajectory",
                point: base.states[k]
                    .iter()
                    .chain(base.inputs[k].iter())
                    .copied()
                    .collect(),
            });
        }
        dz.push(out);
        dx.push(next);
    }
    Ok(DifferentialTrajectory { dx, dz })
}

/// Incremental storage `(x - xt)' P (x - xt)`.
pub fn incremental_storage(p: &DMatrix<f64>, x: &DVector<f64>, xt: &DVector<f64>) -> f64 {
    quad(p, &(x - xt))
}

/// Per-step terms `V(k+1) - V(k) - s(k)` of the dissipation inequality.
pub fn dissipation_terms(
    pair: &TrajectoryPair,
    p: &DMatrix<f64>,
    supply: &SupplyQsr,
) -> Result<Vec<f64>> {
    let (a, b) = (&pair.first, &pair.second);
    ensure_dim("storage matrix rows", a.n_x(), p.nrows())?;
    ensure_dim("storage matrix columns", a.n_x(), p.ncols())?;
    ensure_dim("supply input dimension", a.n_w(), supply.n_w())?;
    ensure_dim("supply output dimension", a.n_z(), supply.n_z())?;
    Ok((0..a.horizon())
        .map(|k| {
            let v_next = incremental_storage(p, &a.states[k + 1], &b.states[k + 1]);
            let v_now = incremental_storage(p, &a.states[k], &b.states[k]);
            let s = supply.evaluate(
                &(&a.inputs[k] - &b.inputs[k]),
                &(&a.outputs[k] - &b.outputs[k]),
            );
            v_next - v_now - s
        })
        .collect())
}

/// Largest per-step violation of the dissipation inequality; `<= 0` means
/// the pair satisfies it at every step. Zero for an empty horizon.
pub fn validate_dissipation(
    pair: &TrajectoryPair,
    p: &DMatrix<f64>,
    supply: &SupplyQsr,
) -> Result<f64> {
    let terms = dissipation_terms(pair, p, supply)?;
    if terms.is_empty() {
        return Ok(0.0);
    }
    Ok(terms.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// [`validate_dissipation`] over many pairs, reduced by maximum.
pub fn validate_pairs(
    pairs: &[TrajectoryPair],
    p: &DMatrix<f64>,
    supply: &SupplyQsr,
    exec: Execution,
) -> Result<f64> {
    exec.map(pairs, |pair| validate_dissipation(pair, p, supply))
        .into_iter()
        .try_fold(f64::NEG_INFINITY, |acc, v| Ok(acc.max(v?)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LongRun {
    Converged,
    /// Peak-to-peak amplitude of each state component after settling.
    Oscillating {
        peak_to_peak: Vec<f64>,
    },
    Diverged,
}

/// Classify the tail of a trajectory.
///
/// Diverged if any state norm exceeds `1e6` or the run was truncated;
/// Converged if every step after `settle_k` moves the state by at most
/// `tol`; Oscillating otherwise.
pub fn classify_longrun(traj: &Trajectory, settle_k: usize, tol: f64) -> Result<LongRun> {
    if traj.truncated.is_some() || traj.states.iter().any(|x| x.norm() > 1e6) {
        return Ok(LongRun::Diverged);
    }
    if traj.horizon() <= settle_k {
        return Err(Error::InvalidArgument(format!(
            "horizon {} must exceed settle_k {settle_k}",
            traj.horizon()
        )));
    }
    let tail = &traj.states[settle_k..];
    let moved = tail
        .windows(2)
        .map(|w| (&w[1] - &w[0]).norm())
        .fold(0.0, f64::max);
    if moved <= tol {
        return Ok(LongRun::Converged);
    }
    let peak_to_peak = (0..traj.n_x())
        .map(|i| {
            let (lo, hi) = tail
                .iter()
                .map(|x| x[i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            hi - lo
        })
        .collect();
    Ok(LongRun::Oscillating { peak_to_peak })
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

fn squared_gap_sum(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let mut acc = KahanSum::default();
    for (u, v) in a.iter().zip(b) {
        for (p, q) in u.iter().zip(v.iter()) {
            acc.add((p - q) * (p - q));
        }
    }
    acc.value()
}

/// Largest finite-horizon ratio `|z - zt|_2 / |w - wt|_2` over the pairs.
///
/// Each pair should start from a common initial state, so the ratio is a
/// lower bound on the incremental l2-gain. Pairs with identical inputs are
/// skipped with a warning.
pub fn empirical_gain_lower_bound(pairs: &[TrajectoryPair]) -> f64 {
    let mut best = 0.0f64;
    for (i, pair) in pairs.iter().enumerate() {
        let den = squared_gap_sum(&pair.first.inputs, &pair.second.inputs);
        if den == 0.0 {
            log::warn!("pair {i} has zero input difference; skipped");
            continue;
        }
        let num = squared_gap_sum(&pair.first.outputs, &pair.second.outputs);
        best = best.max((num / den).sqrt());
    }
    best
}

/// Random in-region trajectory pairs.
#[derive(Debug, Clone)]
pub struct PairSampler {
    /// Region in scheduling coordinates that every step must stay inside.
    pub region: BoxRegion,
    pub horizon: usize,
    /// Initial conditions are drawn from the region scaled by this factor.
    pub interior: f64,
    /// Peak input amplitude.
    pub amplitude: f64,
    /// Pole of the first-order filter shaping the random inputs, in `[0, 1)`.
    pub smoothing: f64,
    /// Both trajectories start from the same state (needed for gain bounds).
    pub shared_initial: bool,
    /// Candidates tried per requested pair before giving up.
    pub attempts_per_pair: usize,
}

impl PairSampler {
    pub fn new(region: BoxRegion, horizon: usize) -> Self {
        Self {
            region,
            horizon,
            interior: 0.9,
            amplitude: 1.0,
            smoothing: 0.8,
            shared_initial: false,
            attempts_per_pair: 50,
        }
    }

    fn inputs(&self, rng: &mut ChaCha8Rng, n_w: usize, w0: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut state = DVector::<f64>::zeros(n_w);
        (0..self.horizon)
            .map(|_| {
                let e = DVector::from_fn(n_w, |_, _| rng.gen_range(-1.0..1.0));
                state = &state * self.smoothing + e * (1.0 - self.smoothing);
                w0 + &state * self.amplitude
            })
            .collect()
    }

    fn in_region<M: Scheduling + ?Sized>(&self, sched: &M, traj: &Trajectory) -> bool {
        traj.truncated.is_none()
            && traj.horizon() == self.horizon
            && (0..traj.horizon()).all(|k| {
                self.region
                    .contains(sched.schedule(&traj.states[k], &traj.inputs[k]).as_slice())
            })
    }

    fn candidate<S, M>(
        &self,
        sys: &S,
        sched: &M,
        seed: u64,
        index: u64,
    ) -> Result<Option<TrajectoryPair>>
    where
        S: DiscreteTimeSystem + ?Sized,
        M: Scheduling + ?Sized,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let inner = self.region.scaled(self.interior);
        let (x0, w0) = sched.lift(&inner.sample(&mut rng));
        let (x1, w1) = if self.shared_initial {
            (x0.clone(), w0.clone())
        } else {
            sched.lift(&inner.sample(&mut rng))
        };
        let wa = self.inputs(&mut rng, sys.n_w(), &w0);
        let wb = self.inputs(&mut rng, sys.n_w(), &w1);
        let a = simulate(sys, &x0, &wa)?;
        let b = simulate(sys, &x1, &wb)?;
        if self.in_region(sched, &a) && self.in_region(sched, &b) {
            Ok(Some(TrajectoryPair::new(a, b)?))
        } else {
            Ok(None)
        }
    }

    /// Draw `n` pairs whose steps all schedule inside the region.
    ///
    /// Candidates are generated from independent streams of one seeded
    /// generator, so the result does not depend on the execution mode.
    pub fn sample<S, M>(
        &self,
        sys: &S,
        sched: &M,
        n: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Vec<TrajectoryPair>>
    where
        S: DiscreteTimeSystem + ?Sized,
        M: Scheduling + ?Sized,
    {
        ensure_dim("scheduling dimension", self.region.dim(), sched.n_rho())?;
        let budget = n.saturating_mul(self.attempts_per_pair).max(1);
        let batch = n.max(16);
        let mut pairs = Vec::with_capacity(n);
        let mut next = 0usize;
        while pairs.len() < n && next < budget {
            let end = (next + batch).min(budget);
            let found = exec.map_range(end - next, |i| {
                self.candidate(sys, sched, seed, (next + i) as u64)
            });
            for c in found {
                if let Some(pair) = c? {
                    if pairs.len() < n {
                        pairs.push(pair);
                    }
                }
            }
            next = end;
        }
        if pairs.len() < n {
            return Err(Error::InvalidArgument(format!(
                "only {} of {n} pairs stayed inside the region after {budget} attempts",
                pairs.len()
            )));
        }
        Ok(pairs)
    }
}
