//! Ellipsoidal outer approximation of the SPS region.
//!
//! With `Z = P^{-1/2} V (Θ - Θ̂)`, the set where perturbed sum `i` beats the
//! reference is `{Z : tr(ZᵀA_iZ + ZᵀB_i + B_iᵀZ + C_i) ≤ 0}`. The largest
//! `|Z|²_F` on it is bounded through the Lagrange dual
//!
//! ```text
//! γ_i = min_λ  λ² tr(B_iᵀ (λA_i - I)⁻¹ B_i) - λ tr(C_i)   s.t.  λA_i - I ⪰ 0,
//! ```
//!
//! which is the Schur-complement program with `Γ = λ² B_iᵀ(λA_i - I)⁻¹B_i`
//! at its optimum. The objective is convex in `λ`, so a bracketed
//! golden-section search on one scalar replaces a general SDP solver. Any
//! feasible `λ` already yields a valid upper bound.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::frobenius_sq;
use crate::regression::{ParameterMatrix, VectorizedProblem};
use crate::sps::{SpsConfig, SpsRandomness, SpsRegion};

/// Quadratic constraint data of one perturbation, in `Z` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DualInstance {
    /// `I - T_i` with `T_i = LᵀL` PSD; `d x d`.
    pub a: DMatrix<f64>,
    /// `d x c`.
    pub b: DMatrix<f64>,
    /// `c x c`, negative semidefinite for instances built from data.
    pub c: DMatrix<f64>,
    pub index: usize,
}

impl DualInstance {
    /// `tr(ZᵀAZ + ZᵀB + BᵀZ + C)`.
    pub fn constraint(&self, z: &DMatrix<f64>) -> f64 {
        (z.transpose() * &self.a * z).trace() + 2.0 * (z.transpose() * &self.b).trace() + self.c.trace()
    }

    /// Side length of the Schur-complement block `[λA - I, λB; λBᵀ, Γ]`.
    pub fn block_size(&self) -> usize {
        self.a.nrows() + self.c.nrows()
    }
}

/// Builds `A_i`, `B_i`, `C_i` for perturbation `i ∈ 1..m`.
///
/// With `Q_i = ΨᵀΛ_iΦ/n`, `M_i = ΨᵀΛ_iY/n`, `L = P^{-1/2} Q_i V⁻¹ P^{1/2}`
/// and `D = P^{-1/2}(M_i - Q_iΘ̂)`: `A_i = I - LᵀL`, `B_i = LᵀD`, `C_i = -DᵀD`.
pub fn build_dual(region: &SpsRegion, i: usize) -> Result<DualInstance> {
    let v_inv_p_sqrt = region
        .v_n()
        .clone()
        .full_piv_lu()
        .solve(region.p_sqrt())
        .ok_or(Error::InstrumentDegeneracy { matrix: "V_n", condition: f64::INFINITY })?;
    build_dual_with(region, i, &v_inv_p_sqrt)
}

fn build_dual_with(region: &SpsRegion, i: usize, v_inv_p_sqrt: &DMatrix<f64>) -> Result<DualInstance> {
    let m = region.config().m;
    if i == 0 || i >= m {
        return Err(Error::InvalidArgument(format!("perturbation index {i} outside 1..{m}")));
    }
    let (n, d, c) = (region.n(), region.d(), region.outputs());
    let signs = region.randomness().signs(i);
    let (psi, phi, y) = (region.psi(), region.phi(), region.y());

    // Q_i and M_i in one pass over the rows.
    let mut q = DMatrix::<f64>::zeros(d, d);
    let mut mm = DMatrix::<f64>::zeros(d, c);
    for k in 0..n {
        let s = signs[k] as f64;
        for a in 0..d {
            let w = s * psi[(k, a)];
            if w == 0.0 {
                continue;
            }
            for b in 0..d {
                q[(a, b)] += w * phi[(k, b)];
            }
            for b in 0..c {
                mm[(a, b)] += w * y[(k, b)];
            }
        }
    }
    let scale = 1.0 / n as f64;
    q *= scale;
    mm *= scale;

    let l = region.p_inv_sqrt() * &q * v_inv_p_sqrt;
    let dmat = region.p_inv_sqrt() * (&mm - &q * region.center());
    let lt = l.transpose();
    let t = &lt * &l;
    let a = DMatrix::identity(d, d) - (&t + t.transpose()) * 0.5;
    let b = &lt * &dmat;
    let cm = -(dmat.transpose() * &dmat);
    let cm = (&cm + cm.transpose()) * 0.5;
    Ok(DualInstance { a, b, c: cm, index: i })
}

/// Optimal value of one dual program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    /// Upper bound on `max |Z|²_F` over the constraint set; `+∞` if unbounded.
    pub gamma: f64,
    /// Minimizing multiplier, `NaN` when unbounded.
    pub lambda: f64,
    pub unbounded: bool,
}

/// Spectral form of a dual instance: `A = U diag(a) Uᵀ`, `β_j = |(UᵀB)_j|²`.
#[derive(Debug, Clone)]
pub struct DualSpectrum {
    pub eigenvalues: Vec<f64>,
    pub weights: Vec<f64>,
    pub trace_c: f64,
}

impl DualSpectrum {
    pub fn new(inst: &DualInstance) -> Self {
        let eig = SymmetricEigen::new(inst.a.clone());
        let ub = eig.eigenvectors.transpose() * &inst.b;
        DualSpectrum {
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            weights: ub.row_iter().map(|r| r.norm_squared()).collect(),
            trace_c: inst.c.trace(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Smallest feasible multiplier `1 / a_min`, or `None` when `A` is not
    /// positive definite and the primal set is unbounded.
    pub fn lambda_floor(&self) -> Option<f64> {
        let a_min = self.min_eigenvalue();
        (a_min > 0.0).then(|| 1.0 / a_min)
    }

    /// Dual objective in minimization form, `+∞` outside the feasible set.
    pub fn objective(&self, lambda: f64) -> f64 {
        if !(lambda >= 0.0) {
            return f64::INFINITY;
        }
        let mut quad = 0.0;
        for (&a, &beta) in self.eigenvalues.iter().zip(&self.weights) {
            let denom = lambda * a - 1.0;
            if denom < 0.0 {
                return f64::INFINITY;
            }
            if beta == 0.0 {
                continue;
            }
            if denom == 0.0 {
                return f64::INFINITY;
            }
            quad += beta / denom;
        }
        lambda * lambda * quad - lambda * self.trace_c
    }
}

/// The Lagrange dual function `g(λ) = tr(-λ²Bᵀ(-I + λA)⁻¹B + λC)`;
/// `γ = -max g`. `None` outside the feasible set.
pub fn dual_function(inst: &DualInstance, lambda: f64) -> Option<f64> {
    let h = DualSpectrum::new(inst).objective(lambda);
    h.is_finite().then_some(-h)
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const LAMBDA_ABS_TOL: f64 = 1e-9;
const LAMBDA_REL_TOL: f64 = 1e-13;
const MAX_DOUBLINGS: usize = 2000;
const MAX_GOLDEN_STEPS: usize = 400;

/// Minimizes the convex dual objective over `λ ≥ 1/a_min`.
pub fn solve_dual(inst: &DualInstance) -> DualSolution {
    let spectrum = DualSpectrum::new(inst);
    let Some(floor) = spectrum.lambda_floor() else {
        return DualSolution { gamma: f64::INFINITY, lambda: f64::NAN, unbounded: true };
    };
    let h = |lambda: f64| spectrum.objective(lambda);

    // Bracket [floor, floor + 2t] by doubling t until the objective turns up.
    let mut step = floor.max(1.0);
    let mut inner = h(floor + step);
    for _ in 0..MAX_DOUBLINGS {
        let outer = h(floor + 2.0 * step);
        if outer >= inner || !outer.is_finite() {
            break;
        }
        step *= 2.0;
        inner = outer;
    }
    let mut lo = floor;
    let mut hi = floor + 2.0 * step;

    let mut best = (h(hi), hi);
    let consider = |lambda: f64, value: f64, best: &mut (f64, f64)| {
        if value < best.0 {
            *best = (value, lambda);
        }
    };
    let floor_value = h(floor);
    consider(floor, floor_value, &mut best);

    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = h(x1);
    let mut f2 = h(x2);
    for _ in 0..MAX_GOLDEN_STEPS {
        if hi - lo <= LAMBDA_ABS_TOL.max(LAMBDA_REL_TOL * hi) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = h(x1);
            consider(x1, f1, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = h(x2);
            consider(x2, f2, &mut best);
        }
    }
    consider(x1, f1, &mut best);
    consider(x2, f2, &mut best);
    DualSolution { gamma: best.0.max(0.0), lambda: best.1, unbounded: !best.0.is_finite() }
}

/// Outer ellipsoid `{Θ : |map (Θ - center)|²_F ≤ radius_sq}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: DMatrix<f64>,
    pub map: DMatrix<f64>,
    pub radius_sq: f64,
    /// Set when the radius is infinite; membership is then trivially true.
    pub unbounded: bool,
}

impl Ellipsoid {
    pub fn distance_sq(&self, theta: &DMatrix<f64>) -> f64 {
        frobenius_sq(&(&self.map * (theta - &self.center)))
    }

    pub fn contains(&self, theta: &DMatrix<f64>) -> bool {
        self.unbounded || self.distance_sq(theta) <= self.radius_sq
    }

    pub fn contains_parameter(&self, theta: &ParameterMatrix) -> bool {
        self.contains(&theta.0)
    }
}

/// Dual optima for every perturbation `1..m`, in index order.
pub fn dual_optima(region: &SpsRegion) -> Result<Vec<DualSolution>> {
    let v_inv_p_sqrt = region
        .v_n()
        .clone()
        .full_piv_lu()
        .solve(region.p_sqrt())
        .ok_or(Error::InstrumentDegeneracy { matrix: "V_n", condition: f64::INFINITY })?;
    (1..region.config().m)
        .into_par_iter()
        .map(|i| build_dual_with(region, i, &v_inv_p_sqrt).map(|inst| solve_dual(&inst)))
        .collect()
}

/// `q`-th largest of the dual optima.
pub fn radius_from_optima(optima: &[DualSolution], q: usize) -> f64 {
    let mut gammas: Vec<f64> = optima.iter().map(|s| s.gamma).collect();
    gammas.sort_by(|a, b| b.total_cmp(a));
    gammas[q - 1]
}

/// Outer ellipsoid of an initialized region (matrix-variate or vectorized).
pub fn outer_approximation(region: &SpsRegion) -> Result<Ellipsoid> {
    let optima = dual_optima(region)?;
    let radius_sq = radius_from_optima(&optima, region.config().q);
    Ok(Ellipsoid {
        center: region.center().clone(),
        map: region.shape_map(),
        radius_sq,
        unbounded: radius_sq.is_infinite(),
    })
}

/// Scalar baseline: the same construction on the vectorized problem, giving
/// an ellipsoid over `d_θ`-vectors (stored as a `d_θ x 1` center).
pub fn vectorized_outer_approximation(
    problem: &VectorizedProblem,
    config: SpsConfig,
    randomness: SpsRandomness,
) -> Result<Ellipsoid> {
    outer_approximation(&SpsRegion::init_vectorized(problem, config, randomness)?)
}

/// Side length of the Schur-complement block: `2d_x + d_u` for the
/// matrix-variate construction.
pub fn matrix_block_size(d_x: usize, d_u: usize) -> usize {
    2 * d_x + d_u
}

/// `d_x² + d_x d_u + 1` for the vectorized baseline.
pub fn vectorized_block_size(d_x: usize, d_u: usize) -> usize {
    d_x * d_x + d_x * d_u + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_stable_system, simulate, synthesize_lqr, NoiseModel, SystemSpec};
    use crate::regression::{build, build_instruments, Mode};
    use nalgebra::DVector;
    use rand::Rng;

    fn scalar_instance(a: f64, b: f64, c: f64) -> DualInstance {
        DualInstance {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            c: DMatrix::from_element(1, 1, c),
            index: 1,
        }
    }

    pub(crate) fn region(d: usize, n: usize, seed: u64) -> SpsRegion {
        let (a, b) = random_stable_system(d, d, 0.9, seed).unwrap();
        let k = synthesize_lqr(&a, &b, 1.0, 1.0).unwrap();
        let spec = SystemSpec::new(a, b, k, 0.0, NoiseModel::standard_gaussian()).unwrap();
        let traj = simulate(&spec, n, &DVector::zeros(d), seed).unwrap();
        let (data, _) = build(&traj, &spec, Mode::Direct).unwrap();
        let data = build_instruments(&data, &traj).unwrap();
        SpsRegion::init(&data, SpsConfig { seed, ..SpsConfig::default() }).unwrap()
    }

    #[test]
    fn negative_curvature_is_unbounded() {
        let sol = solve_dual(&scalar_instance(-1.0, 0.0, 2.0));
        assert!(sol.unbounded && sol.gamma.is_infinite());
    }

    #[test]
    fn flat_curvature_is_unbounded() {
        // With A = 0 every Z with 2zb + c ≤ 0 is feasible: a half-line or everything.
        for (b, c) in [(0.0, -1.0), (1.0, -1.0)] {
            assert!(solve_dual(&scalar_instance(0.0, b, c)).unbounded);
        }
    }

    #[test]
    fn scalar_instances_against_calculus() {
        // a z² + 2bz + c ≤ 0 is an interval with endpoints (-b ± sqrt(b² - ac))/a,
        // so max z² = ((|b| + sqrt(b² - ac))/a)².
        for &(a, b, c) in &[(1.0, 0.0, -1.0), (0.5, 0.3, -0.2), (0.25, -1.0, -0.5), (0.9, 2.0, -0.01)] {
            let exact = ((f64::abs(b) + (b * b - a * c).sqrt()) / a).powi(2);
            let sol = solve_dual(&scalar_instance(a, b, c));
            assert!(!sol.unbounded);
            assert!(sol.gamma >= exact - 1e-9 * exact);
            assert!(sol.gamma <= exact * (1.0 + 1e-7), "a={a} b={b} c={c}: {} vs {exact}", sol.gamma);
            // Dense grid over λ as a second opinion.
            let spectrum = DualSpectrum::new(&scalar_instance(a, b, c));
            let floor = spectrum.lambda_floor().unwrap();
            let grid_min =
                (1..200_000).map(|j| spectrum.objective(floor + j as f64 * 1e-4 * floor)).fold(f64::INFINITY, f64::min);
            assert!(sol.gamma <= grid_min + 1e-9 * grid_min.abs());
        }
    }

    #[test]
    fn identity_perturbation_collapses_a() {
        // Λ = I gives Q = V, so L = P^{-1/2} V V⁻¹ P^{1/2} = I and A = 0.
        let region = region(2, 100, 3);
        let v_inv_p_sqrt = region.v_n().clone().full_piv_lu().solve(region.p_sqrt()).unwrap();
        let l = region.p_inv_sqrt() * region.v_n() * v_inv_p_sqrt;
        let a = DMatrix::identity(4, 4) - l.transpose() * l;
        assert!(a.amax() < 1e-10);
    }

    #[test]
    fn instances_satisfy_structural_invariants() {
        for seed in 0..10 {
            let region = region(2, 80, seed);
            for i in 1..region.config().m {
                let inst = build_dual(&region, i).unwrap();
                let eig = SymmetricEigen::new(inst.a.clone());
                assert!(eig.eigenvalues.max() <= 1.0 + 1e-10);
                assert!((&inst.c - inst.c.transpose()).amax() < 1e-10);
                assert_eq!(inst.block_size(), 6);
            }
        }
    }

    #[test]
    fn quadratic_form_matches_norm_difference() {
        let region = region(3, 120, 4);
        let map = region.shape_map();
        let mut rng = crate::seed::rng(4);
        for i in [1, 17, 99] {
            let inst = build_dual(&region, i).unwrap();
            for _ in 0..20 {
                let theta = region.center() + DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>() - 0.5);
                let z = &map * (&theta - region.center());
                let eval = region.evaluate(&theta).unwrap();
                let expected = eval.norms[0] - eval.norms[i];
                let got = inst.constraint(&z);
                assert!((got - expected).abs() <= 1e-8 * eval.norms[0].max(eval.norms[i]).max(1e-12));
            }
        }
    }

    #[test]
    fn schur_certificate_is_psd() {
        let region = region(2, 100, 6);
        for i in [1, 50, 99] {
            let inst = build_dual(&region, i).unwrap();
            let sol = solve_dual(&inst);
            if sol.unbounded {
                continue;
            }
            let lambda = sol.lambda;
            let d = inst.a.nrows();
            let c = inst.c.nrows();
            let top = &inst.a * lambda - DMatrix::identity(d, d);
            let gamma = (inst.b.transpose() * top.clone().pseudo_inverse(1e-14).unwrap() * &inst.b) * (lambda * lambda);
            let mut block = DMatrix::zeros(d + c, d + c);
            block.view_mut((0, 0), (d, d)).copy_from(&top);
            block.view_mut((0, d), (d, c)).copy_from(&(&inst.b * lambda));
            block.view_mut((d, 0), (c, d)).copy_from(&(inst.b.transpose() * lambda));
            block.view_mut((d, d), (c, c)).copy_from(&gamma);
            let min_eig = SymmetricEigen::new(block.clone()).eigenvalues.min();
            assert!(min_eig >= -1e-8 * block.amax());
            let value = gamma.trace() - lambda * inst.c.trace();
            assert!((value - sol.gamma).abs() <= 1e-8 * sol.gamma.max(1.0));
            assert_eq!(block.nrows(), matrix_block_size(2, 2));
        }
    }

    #[test]
    fn dual_function_is_concave() {
        let region = region(2, 100, 7);
        for i in [2, 40, 80] {
            let inst = build_dual(&region, i).unwrap();
            let spectrum = DualSpectrum::new(&inst);
            let Some(floor) = spectrum.lambda_floor() else { continue };
            let grid: Vec<f64> = (1..=1000).map(|j| floor * (1.0 + j as f64 * 1e-2)).collect();
            let g: Vec<f64> = grid.iter().map(|&l| dual_function(&inst, l).unwrap()).collect();
            let scale = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            for w in g.windows(3) {
                assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn ellipsoid_contains_center() {
        let region = region(2, 100, 8);
        let ell = outer_approximation(&region).unwrap();
        assert!(ell.contains(region.center()));
        assert!(ell.radius_sq > 0.0);
    }

    #[test]
    fn radius_nonincreasing_in_q() {
        let region = region(2, 100, 9);
        let optima = dual_optima(&region).unwrap();
        assert!(radius_from_optima(&optima, 5) >= radius_from_optima(&optima, 10));
    }

    #[test]
    fn block_sizes() {
        assert_eq!(matrix_block_size(1, 1), 3);
        assert_eq!(vectorized_block_size(1, 1), 3);
        assert_eq!(matrix_block_size(4, 4), 12);
        assert_eq!(vectorized_block_size(4, 4), 33);
    }
}
