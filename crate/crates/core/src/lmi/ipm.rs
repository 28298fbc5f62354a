//! Primal-dual interior-point backend for LMI feasibility.
//!
//! Solves the margin problem in dual standard form over `v = (y, t)`:
//!
//! ```text
//! maximize t  s.t.  G_j(y) - t I >= 0        (every block, PSD form)
//!                   X_k(y) - floor I >= 0    (positive-definite variables)
//!                   [r I, y; y', r] >= 0     (|y| <= r)
//!                   cap - t >= 0
//! ```
//!
//! Iterates are dual feasible throughout, so `t` is always a valid lower
//! bound on the margin of the current `y`. The primal iterate `X` is
//! corrected onto the primal equality constraints; when the corrected
//! matrix is PSD, weak duality makes `<C, X>` an upper bound on the best
//! margin inside the ball. That bound is what an
//! infeasibility verdict rests on. Search directions are HKM with a
//! Mehrotra predictor-corrector.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::problem::LmiProblem;
use super::{Backend, InfeasibleInfo, Solution, SolveOptions, Verdict};
use crate::linalg::{min_eigenvalue, sym_basis, sym_coords};

#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPointBackend;

/// Slack matrices with their Cholesky factors, one per block.
type Factored = Vec<(DMatrix<f64>, Cholesky<f64, nalgebra::Dyn>)>;
/// Search direction `(dv, dZ, dX)`.
type Direction = (DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

/// `Z(v) = c - sum_k v_k a_k`, with absent coefficients equal to zero.
struct Block {
    c: DMatrix<f64>,
    a: Vec<Option<DMatrix<f64>>>,
}

impl Block {
    fn size(&self) -> usize {
        self.c.nrows()
    }

    fn slack(&self, v: &[f64]) -> DMatrix<f64> {
        let mut z = self.c.clone();
        for (ak, vk) in self.a.iter().zip(v) {
            if let Some(ak) = ak {
                z -= ak * *vk;
            }
        }
        z
    }

    /// `(<a_k, w>)_k` for a possibly nonsymmetric `w`.
    fn adjoint(&self, w: &DMatrix<f64>, out: &mut DVector<f64>) {
        for (k, ak) in self.a.iter().enumerate() {
            if let Some(ak) = ak {
                out[k] += ak.dot(w);
            }
        }
    }

    fn apply(&self, dv: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size(), self.size());
        for (k, ak) in self.a.iter().enumerate() {
            if let Some(ak) = ak {
                m += ak * dv[k];
            }
        }
        m
    }
}

struct Layout {
    blocks: Vec<Block>,
    /// Number of constraint blocks coming from the problem itself.
    n_main: usize,
    /// Number of `y` coordinates; `t` sits at index `n`.
    n: usize,
}

fn nonzero(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().all(|v| *v == 0.0) {
        None
    } else {
        Some(m)
    }
}

impl Layout {
    fn new(problem: &LmiProblem, opts: &SolveOptions) -> Self {
        let n = problem.n_vars();
        let mut blocks: Vec<Block> = problem
            .blocks
            .iter()
            .map(|b| {
                let g = b.psd_form();
                let size = g.size();
                let mut a: Vec<_> = g.coeffs.into_iter().map(|f| nonzero(-f)).collect();
                a.push(Some(DMatrix::identity(size, size)));
                Block { c: g.constant, a }
            })
            .collect();
        let n_main = blocks.len();
        for var in problem.symmetric.iter().filter(|v| v.positive_definite) {
            let dim = var.dim;
            let mut a = vec![None; n + 1];
            for (k, e) in sym_basis(dim).into_iter().enumerate() {
                a[var.offset + k] = Some(-e);
            }
            blocks.push(Block {
                c: -DMatrix::identity(dim, dim) * opts.p_floor,
                a,
            });
        }
        let mut a = vec![None; n + 1];
        a[n] = Some(DMatrix::from_element(1, 1, 1.0));
        blocks.push(Block {
            c: DMatrix::from_element(1, 1, opts.margin_cap),
            a,
        });
        if n > 0 {
            let mut a = vec![None; n + 1];
            for (k, slot) in a.iter_mut().take(n).enumerate() {
                let mut e = DMatrix::zeros(n + 1, n + 1);
                e[(k, n)] = -1.0;
                e[(n, k)] = -1.0;
                *slot = Some(e);
            }
            blocks.push(Block {
                c: DMatrix::identity(n + 1, n + 1) * opts.radius,
                a,
            });
        }
        Layout { blocks, n_main, n }
    }

    fn order(&self) -> f64 {
        self.blocks.iter().map(|b| b.size()).sum::<usize>() as f64
    }

    fn operator(&self, xs: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n + 1);
        for (b, x) in self.blocks.iter().zip(xs) {
            b.adjoint(x, &mut out);
        }
        out
    }

    /// Weak-duality bound on the best margin, from the primal iterate
    /// moved onto the equality constraints by `X + X (sum_k c_k a_k) X`.
    /// `None` if the correction breaks positive semidefiniteness.
    fn upper_bound(&self, xs: &[DMatrix<f64>], exec: crate::exec::Execution) -> Option<f64> {
        let m = self.n + 1;
        let residual = self.rhs() - self.operator(xs);
        let products: Vec<Vec<Option<DMatrix<f64>>>> = exec.map_range(self.blocks.len(), |j| {
            self.blocks[j]
                .a
                .iter()
                .map(|a| a.as_ref().map(|a| &xs[j] * a * &xs[j]))
                .collect()
        });
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for (blk, prod) in self.blocks.iter().zip(&products) {
            for (k, ak) in blk.a.iter().enumerate() {
                let Some(ak) = ak else { continue };
                for (l, pl) in prod.iter().enumerate() {
                    if let Some(pl) = pl {
                        gram[(k, l)] += ak.dot(pl);
                    }
                }
            }
        }
        let c = solve_spd(&gram, &residual)?;
        let fixed: Vec<Option<DMatrix<f64>>> = exec.map_range(self.blocks.len(), |j| {
            let mut x = xs[j].clone();
            for (ck, pk) in c.iter().zip(&products[j]) {
                if let Some(pk) = pk {
                    x += pk * *ck;
                }
            }
            let x = sym(x);
            (min_eigenvalue(&x) >= 0.0).then_some(x)
        });
        let mut bound = 0.0;
        for (blk, x) in self.blocks.iter().zip(fixed) {
            bound += blk.c.dot(&x?);
        }
        Some(bound)
    }

    fn rhs(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.n + 1);
        b[self.n] = 1.0;
        b
    }

    fn margin(&self, v: &[f64], opts: &SolveOptions) -> f64 {
        let t = v[self.n];
        opts.exec
            .map(&self.blocks[..self.n_main], |b| {
                min_eigenvalue(&b.slack(v)) + t
            })
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Largest `alpha` keeping `x + alpha dx` PSD, given the Cholesky factor of `x`.
fn max_step(chol: &Cholesky<f64, nalgebra::Dyn>, dx: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(y) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&y.transpose()) else {
        return 0.0;
    };
    let lam = min_eigenvalue(&crate::linalg::symmetrize(&w));
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    crate::linalg::symmetrize(&m)
}

struct BlockState {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    z_inv: DMatrix<f64>,
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = m
        .diagonal()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-300);
    let mut h = m.clone();
    for attempt in 0..6 {
        if let Some(ch) = Cholesky::new(h.clone()) {
            let s = ch.solve(rhs);
            if s.iter().all(|v| v.is_finite()) {
                return Some(s);
            }
        }
        let bump = scale * 1e-14 * 100f64.powi(attempt);
        for i in 0..h.nrows() {
            h[(i, i)] += bump;
        }
    }
    m.clone()
        .lu()
        .solve(rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
}

impl InteriorPointBackend {
    fn initial_point(problem: &LmiProblem, layout: &Layout, opts: &SolveOptions) -> Vec<f64> {
        let mut v = vec![0.0; layout.n + 1];
        for var in problem.symmetric.iter().filter(|var| var.positive_definite) {
            let p = DMatrix::<f64>::identity(var.dim, var.dim) * (opts.p_floor + 1.0);
            for (k, c) in sym_coords(&p).into_iter().enumerate() {
                v[var.offset + k] = c;
            }
        }
        let lowest = layout.blocks[..layout.n_main]
            .iter()
            .map(|b| min_eigenvalue(&b.slack(&v)))
            .fold(f64::INFINITY, f64::min);
        v[layout.n] = (lowest - 1.0).min(0.5 * opts.margin_cap);
        v
    }
}

impl Backend for InteriorPointBackend {
    fn name(&self) -> &'static str {
        "primal-dual interior point"
    }

    fn solve(&self, problem: &LmiProblem, opts: &SolveOptions) -> Verdict {
        let layout = Layout::new(problem, opts);
        let m = layout.n + 1;
        let mut v = Self::initial_point(problem, &layout, opts);
        if layout.n_main == 0 {
            return Verdict::Feasible(Solution {
                y: v[..layout.n].to_vec(),
                margin: f64::INFINITY,
                iterations: 0,
            });
        }
        let order = layout.order();
        let b = layout.rhs();

        let factor = |v: &[f64]| -> Option<Factored> {
            opts.exec
                .map(&layout.blocks, |blk| {
                    let z = blk.slack(v);
                    Cholesky::new(z.clone()).map(|c| (z, c))
                })
                .into_iter()
                .collect()
        };
        let Some(first) = factor(&v) else {
            return Verdict::Unsolved(
                "starting point is not strictly inside the search region".into(),
            );
        };
        let mut states: Vec<BlockState> = first
            .into_iter()
            .map(|(z, c)| {
                let z_inv = c.inverse();
                BlockState {
                    x: z_inv.clone(),
                    z,
                    z_inv,
                }
            })
            .collect();

        let mut best_bound = f64::INFINITY;
        let mut stalls = 0usize;
        for iteration in 0..opts.max_iterations {
            let t = v[layout.n];
            let xs: Vec<DMatrix<f64>> = states.iter().map(|s| s.x.clone()).collect();
            if let Some(bound) = layout.upper_bound(&xs, opts.exec) {
                best_bound = best_bound.min(bound);
            }
            let feasible = |v: Vec<f64>| {
                let margin = layout.margin(&v, opts);
                Verdict::Feasible(Solution {
                    y: v[..layout.n].to_vec(),
                    margin,
                    iterations: iteration,
                })
            };
            if opts.stop_when_feasible && t >= 0.0 {
                return feasible(v);
            }
            if best_bound < -opts.tol {
                return Verdict::Infeasible(InfeasibleInfo {
                    best_margin: t,
                    margin_upper_bound: best_bound,
                    certified: true,
                });
            }
            if best_bound - t <= opts.gap_tol * t.abs().max(1.0) {
                let margin = layout.margin(&v, opts);
                return if margin >= -opts.tol {
                    feasible(v)
                } else {
                    Verdict::Infeasible(InfeasibleInfo {
                        best_margin: margin,
                        margin_upper_bound: best_bound,
                        certified: false,
                    })
                };
            }

            let mu = states.iter().map(|s| s.x.dot(&s.z)).sum::<f64>() / order;
            if mu <= 1e-14 * t.abs().max(1.0) {
                // Converged to roundoff without a usable bound.
                let margin = layout.margin(&v, opts);
                return if margin >= -opts.tol {
                    feasible(v)
                } else {
                    Verdict::Infeasible(InfeasibleInfo {
                        best_margin: margin,
                        margin_upper_bound: best_bound,
                        certified: false,
                    })
                };
            }
            let rp = &b - layout.operator(&xs);

            // Schur complement M_kl = sum_j <a_k, X a_l Z^-1>.
            // Summed in block order so the result does not depend on threading.
            let m_terms = opts
                .exec
                .map_range(layout.blocks.len(), |j| {
                    let blk = &layout.blocks[j];
                    let st = &states[j];
                    let mut out = DMatrix::zeros(m, m);
                    let ws: Vec<Option<DMatrix<f64>>> = blk
                        .a
                        .iter()
                        .map(|a| a.as_ref().map(|a| &st.x * a * &st.z_inv))
                        .collect();
                    for (k, ak) in blk.a.iter().enumerate() {
                        let Some(ak) = ak else { continue };
                        for (l, wl) in ws.iter().enumerate().take(k + 1) {
                            let Some(wl) = wl else { continue };
                            let val = ak.dot(wl);
                            out[(k, l)] = val;
                            out[(l, k)] = val;
                        }
                    }
                    out
                })
                .into_iter()
                .fold(DMatrix::<f64>::zeros(m, m), |acc, t| acc + t);

            let direction = |target: &[DMatrix<f64>]| -> Option<Direction> {
                let rhs = &rp - layout.operator(target);
                let dv = solve_spd(&m_terms, &rhs)?;
                let dz: Vec<DMatrix<f64>> =
                    layout.blocks.iter().map(|blk| -blk.apply(&dv)).collect();
                let dx: Vec<DMatrix<f64>> = states
                    .iter()
                    .zip(target)
                    .zip(&dz)
                    .map(|((st, h), dz)| h - sym(&st.x * dz * &st.z_inv))
                    .collect();
                Some((dv, dx, dz))
            };
            let steps = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| -> (f64, f64) {
                let ap = states
                    .iter()
                    .zip(dx)
                    .filter_map(|(st, d)| Cholesky::new(st.x.clone()).map(|c| max_step(&c, d)))
                    .fold(f64::INFINITY, f64::min);
                let ad = states
                    .iter()
                    .zip(dz)
                    .filter_map(|(st, d)| Cholesky::new(st.z.clone()).map(|c| max_step(&c, d)))
                    .fold(f64::INFINITY, f64::min);
                (ap, ad)
            };

            // Predictor.
            let target: Vec<DMatrix<f64>> = states.iter().map(|s| -&s.x).collect();
            let Some((_, dx_p, dz_p)) = direction(&target) else {
                return Verdict::Unsolved("singular Schur complement".into());
            };
            let (ap, ad) = steps(&dx_p, &dz_p);
            let (ap, ad) = (ap.min(1.0), ad.min(1.0));
            let mu_aff = states
                .iter()
                .zip(&dx_p)
                .zip(&dz_p)
                .map(|((st, dx), dz)| (&st.x + dx * ap).dot(&(&st.z + dz * ad)))
                .sum::<f64>()
                / order;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let target: Vec<DMatrix<f64>> = states
                .iter()
                .zip(&dx_p)
                .zip(&dz_p)
                .map(|((st, dx), dz)| &st.z_inv * (sigma * mu) - &st.x - sym(dx * dz * &st.z_inv))
                .collect();
            let Some((dv, dx, dz)) = direction(&target) else {
                return Verdict::Unsolved("singular Schur complement".into());
            };
            let (ap, ad) = steps(&dx, &dz);
            let ap = (0.95 * ap).min(1.0);
            let mut ad = (0.95 * ad).min(1.0);

            // Dual update with exact recomputation of the slacks.
            let mut accepted = None;
            while ad > 1e-14 {
                let trial: Vec<f64> = v
                    .iter()
                    .enumerate()
                    .map(|(k, vk)| vk + ad * dv[k])
                    .collect();
                if let Some(f) = factor(&trial) {
                    accepted = Some((trial, f));
                    break;
                }
                ad *= 0.5;
            }
            if ap < 1e-12 && accepted.is_none() {
                stalls += 1;
                if stalls > 5 {
                    return Verdict::Unsolved(format!(
                        "interior-point steps stalled (margin {t:.3e}, bound {best_bound:.3e})"
                    ));
                }
            }
            for (st, d) in states.iter_mut().zip(&dx) {
                st.x = sym(&st.x + d * ap);
            }
            if let Some((trial, f)) = accepted {
                v = trial;
                for (st, (z, c)) in states.iter_mut().zip(f) {
                    st.z_inv = c.inverse();
                    st.z = z;
                }
            }
            if states.iter().any(|s| s.x.iter().any(|x| !x.is_finite())) {
                return Verdict::Unsolved("non-finite primal iterate".into());
            }
        }
        Verdict::Unsolved(format!(
            "no convergence after {} iterations (margin {:.3e}, bound {best_bound:.3e})",
            opts.max_iterations, v[layout.n]
        ))
    }
}
