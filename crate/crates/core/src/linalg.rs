//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number threshold above which a square system is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// 2-norm condition number from the singular values. Returns `inf` for an
/// exactly singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Spectral radius (largest eigenvalue modulus) of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves `a · x = b` by LU with partial pivoting after checking conditioning.
pub fn solve_checked(a: &DMatrix<f64>, b: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let condition = condition_number(a);
    if condition > CONDITION_LIMIT {
        return Err(Error::InstrumentDegeneracy { matrix: name, condition });
    }
    a.clone().lu().solve(b).ok_or(Error::InstrumentDegeneracy { matrix: name, condition })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root and its inverse of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdRoots {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

/// Computes `P^{1/2}` and `P^{-1/2}` through the symmetric eigendecomposition.
/// Fails when the smallest eigenvalue is at most `1e-12` times the largest.
pub fn spd_roots(p: &DMatrix<f64>, name: &'static str) -> Result<SpdRoots> {
    let eig = SymmetricEigen::new(symmetrize(p));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::NotPositiveDefinite(name));
    }
    let u = &eig.eigenvectors;
    let root = eig.eigenvalues.map(f64::sqrt);
    let sqrt = u * DMatrix::from_diagonal(&root) * u.transpose();
    let inv_sqrt = u * DMatrix::from_diagonal(&root.map(|r| 1.0 / r)) * u.transpose();
    Ok(SpdRoots { sqrt: symmetrize(&sqrt), inv_sqrt: symmetrize(&inv_sqrt) })
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}
