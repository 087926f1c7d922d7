//! Least-squares and instrumental-variable point estimates and the
//! asymptotic confidence ellipsoid built around the IV estimate.

use nalgebra::{DMatrix, DVector};

use crate::chi2::chi2_quantile;
use crate::error::{Error, Result};
use crate::linalg::{condition_number, frobenius_sq, CONDITION_LIMIT};
use crate::regression::{ParameterMatrix, RegressionData, VectorizedProblem};

/// Solves the square system `lhs · X = rhs` with full pivoting, rejecting
/// ill-conditioned `lhs`.
pub(crate) fn solve_normal(lhs: DMatrix<f64>, rhs: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let condition = condition_number(&lhs);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::InstrumentDegeneracy { matrix: name, condition });
    }
    lhs.full_piv_lu().solve(rhs).ok_or(Error::InstrumentDegeneracy { matrix: name, condition })
}

/// `(ΨᵀΦ)⁻¹ΨᵀY` for arbitrary-width `Y`.
pub(crate) fn iv_solve(y: &DMatrix<f64>, phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let psi_t = psi.transpose();
    solve_normal(&psi_t * phi, &(&psi_t * y), "ΨᵀΦ")
}

/// `(ΦᵀΦ)⁻¹ΦᵀY`.
pub fn ls_estimate(data: &RegressionData) -> Result<ParameterMatrix> {
    let phi_t = data.phi.transpose();
    solve_normal(&phi_t * &data.phi, &(&phi_t * &data.y), "ΦᵀΦ").map(ParameterMatrix)
}

/// `(ΨᵀΦ)⁻¹ΨᵀY`.
pub fn iv_estimate(data: &RegressionData) -> Result<ParameterMatrix> {
    iv_solve(&data.y, &data.phi, data.psi()?).map(ParameterMatrix)
}

/// Confidence ellipsoid from the asymptotic normality of the vectorized IV
/// estimate: `(θ - θ̂)ᵀ R (θ - θ̂) ≤ μ σ̂² / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticEllipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub radius_sq: f64,
    pub p: f64,
    pub mu: f64,
    pub sigma_sq: f64,
}

impl AsymptoticEllipsoid {
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        let diff = theta - &self.center;
        (diff.transpose() * &self.shape * &diff)[(0, 0)] <= self.radius_sq
    }

    pub fn contains_matrix(&self, theta: &ParameterMatrix) -> bool {
        self.contains(&theta.to_vector())
    }
}

/// Builds the asymptotic ellipsoid on the vectorized problem with `N` scalar
/// rows: `R_N = V̄ᵀ P̄⁻¹ V̄` with `V̄ = ZᵀΞ/N`, `P̄ = ZᵀZ/N`, and
/// `σ̂² = |y - Ξθ̂|² / (N - d_θ)`.
pub fn asymptotic_region(problem: &VectorizedProblem, p: f64) -> Result<AsymptoticEllipsoid> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {p} outside (0, 1)")));
    }
    let rows = problem.rows();
    let d_theta = problem.d_theta();
    if rows <= d_theta {
        return Err(Error::Underdetermined { rows, params: d_theta });
    }
    let y = DMatrix::from_column_slice(rows, 1, problem.y.as_slice());
    let center = iv_solve(&y, &problem.xi, &problem.zeta)?;
    let scale = 1.0 / rows as f64;
    let zt = problem.zeta.transpose();
    let v = &zt * &problem.xi * scale;
    let p_mat = &zt * &problem.zeta * scale;
    let p_inv_v = solve_normal(p_mat, &v, "ΨᵀΨ")?;
    let shape = v.transpose() * p_inv_v;
    let shape = (&shape + shape.transpose()) * 0.5;
    let resid = &y - &problem.xi * &center;
    let sigma_sq = frobenius_sq(&resid) / (rows - d_theta) as f64;
    let mu = chi2_quantile(p, d_theta)?;
    Ok(AsymptoticEllipsoid {
        center: center.column(0).into_owned(),
        shape,
        radius_sq: mu * sigma_sq * scale,
        p,
        mu,
        sigma_sq,
    })
}
