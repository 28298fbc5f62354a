use nalgebra::DMatrix;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue, sym_basis, sym_from_coords};

/// Required sign of a constraint block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `F(y) >= 0`
    Psd,
    /// `F(y) <= 0`
    Nsd,
}

/// `F(y) = F_0 + sum_i y_i F_i` with symmetric `F_i`, constrained by `sense`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
    pub sense: Sense,
}

impl AffineBlock {
    pub fn new(constant: DMatrix<f64>, coeffs: Vec<DMatrix<f64>>, sense: Sense) -> Result<Self> {
        let n = constant.nrows();
        for m in std::iter::once(&constant).chain(&coeffs) {
            ensure_dim("block rows", n, m.nrows())?;
            ensure_dim("block columns", n, m.ncols())?;
            if !is_symmetric(m, 1e-12 * (1.0 + crate::linalg::max_abs(m))) {
                return Err(Error::InvalidArgument(
                    "constraint block is not symmetric".into(),
                ));
            }
        }
        Ok(Self {
            constant,
            coeffs,
            sense,
        })
    }

    /// Build the block of an affine map of one symmetric `n x n` variable by
    /// probing it at zero and at each basis matrix.
    pub fn from_affine_map<F>(n: usize, sense: Sense, f: F) -> Self
    where
        F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    {
        let constant = f(&DMatrix::zeros(n, n));
        let coeffs = sym_basis(n).iter().map(|e| f(e) - &constant).collect();
        Self {
            constant,
            coeffs,
            sense,
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        self.coeffs
            .iter()
            .zip(y)
            .fold(self.constant.clone(), |acc, (f, v)| acc + f * *v)
    }

    /// Block rewritten so that the requirement reads `G(y) >= 0`.
    pub fn psd_form(&self) -> AffineBlock {
        match self.sense {
            Sense::Psd => self.clone(),
            Sense::Nsd => AffineBlock {
                constant: -&self.constant,
                coeffs: self.coeffs.iter().map(|c| -c).collect(),
                sense: Sense::Psd,
            },
        }
    }

    /// Smallest eigenvalue of the PSD form at `y`; negative means violated.
    pub fn margin(&self, y: &[f64]) -> f64 {
        let v = self.eval(y);
        match self.sense {
            Sense::Psd => min_eigenvalue(&v),
            Sense::Nsd => min_eigenvalue(&(-v)),
        }
    }
}

/// A symmetric matrix decision variable occupying `dim (dim + 1) / 2`
/// consecutive coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricVar {
    pub name: String,
    pub dim: usize,
    pub offset: usize,
    /// Require `X >= floor * I` as a hard constraint.
    pub positive_definite: bool,
}

impl SymmetricVar {
    pub fn n_coords(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn extract(&self, y: &[f64]) -> DMatrix<f64> {
        sym_from_coords(self.dim, &y[self.offset..self.offset + self.n_coords()])
    }
}

/// Decision variables plus affine LMI blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LmiProblem {
    pub symmetric: Vec<SymmetricVar>,
    /// Names of scalar variables, placed after all symmetric coordinates
    /// in declaration order.
    pub scalars: Vec<String>,
    pub blocks: Vec<AffineBlock>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a symmetric matrix variable. Must precede scalar variables.
    pub fn add_symmetric(&mut self, name: &str, dim: usize, positive_definite: bool) -> usize {
        assert!(self.scalars.is_empty(), "declare symmetric variables first");
        let offset = self.n_vars();
        self.symmetric.push(SymmetricVar {
            name: name.to_string(),
            dim,
            offset,
            positive_definite,
        });
        self.symmetric.len() - 1
    }

    pub fn add_scalar(&mut self, name: &str) -> usize {
        self.scalars.push(name.to_string());
        self.n_vars() - 1
    }

    pub fn add_block(&mut self, block: AffineBlock) -> Result<()> {
        ensure_dim("block variable count", self.n_vars(), block.n_vars())?;
        self.blocks.push(block);
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.symmetric.iter().map(|v| v.n_coords()).sum::<usize>() + self.scalars.len()
    }

    /// Smallest constraint margin over all blocks at `y`.
    pub fn margin(&self, y: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.margin(y))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map_probe_reconstructs() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.7]);
        let f = |p: &DMatrix<f64>| a.transpose() * p * &a - p + DMatrix::identity(2, 2);
        let blk = AffineBlock::from_affine_map(2, Sense::Nsd, f);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let y = crate::linalg::sym_coords(&p);
        assert!((blk.eval(&y) - f(&p)).amax() < 1e-14);
    }

    #[test]
    fn psd_form_negates() {
        let blk = AffineBlock::new(
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::from_element(1, 1, -1.0)],
            Sense::Nsd,
        )
        .unwrap();
        assert_eq!(blk.margin(&[3.0]), 2.0);
        assert_eq!(blk.psd_form().margin(&[3.0]), 2.0);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(AffineBlock::new(m, vec![], Sense::Psd).is_err());
    }
}
