//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};

/// Basis of the space of `n x n` symmetric matrices: `E_ii` and
/// `E_ij + E_ji` for `i < j`, in row-major upper-triangle order.
pub fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

/// Coordinates of a symmetric matrix in [`sym_basis`].
pub fn sym_coords(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(0.5 * (p[(i, j)] + p[(j, i)]));
        }
    }
    out
}

/// Inverse of [`sym_coords`].
pub fn sym_from_coords(n: usize, y: &[f64]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            p[(i, j)] = y[k];
            p[(j, i)] = y[k];
            k += 1;
        }
    }
    p
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Smallest eigenvalue of the symmetric part of `m`. Empty matrices give +inf.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Largest eigenvalue modulus of a square (not necessarily symmetric) matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Assemble a block matrix from a grid of blocks. Row heights come from the
/// first block in each row, column widths from the first row.
pub fn block(rows: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (row, &h) in rows.iter().zip(&heights) {
        let mut c0 = 0;
        for (b, &w) in row.iter().zip(&widths) {
            debug_assert_eq!((b.nrows(), b.ncols()), (h, w), "block shape");
            out.view_mut((r0, c0), (h, w)).copy_from(b);
            c0 += w;
        }
        r0 += h;
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Quadratic form `v' M v`.
pub fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}
