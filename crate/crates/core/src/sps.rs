//! Sign-perturbed sums with instrumental variables on matrix-variate
//! regressions.
//!
//! For a candidate `Θ` the residual `E = Y - ΦΘ` is correlated with the
//! instruments once unperturbed and `m - 1` times with random row signs:
//!
//! ```text
//! S_0 = (1/n) P^{-1/2} Ψᵀ E,    S_i = (1/n) P^{-1/2} Ψᵀ Λ_i E
//! ```
//!
//! `Θ` is accepted when `|S_0|²_F` is not among the `q` largest of the `m`
//! squared Frobenius norms, ties broken by a random permutation. The same
//! machinery run on the vectorized problem (one output column, `n·d_x`
//! rows) gives the scalar baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::iv_solve;
use crate::linalg::{condition_number, spd_roots, CONDITION_LIMIT};
use crate::regression::{ParameterMatrix, RegressionData, VectorizedProblem};
use crate::seed;

/// `p = 1 - q/m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpsConfig {
    pub m: usize,
    pub q: usize,
    pub seed: u64,
}

impl Default for SpsConfig {
    fn default() -> Self {
        SpsConfig { m: 100, q: 10, seed: 0 }
    }
}

impl SpsConfig {
    pub fn new(m: usize, q: usize, seed: u64) -> Result<Self> {
        if m < 2 || q == 0 || q >= m {
            return Err(Error::InvalidArgument(format!("need m > q > 0, got m = {m}, q = {q}")));
        }
        Ok(SpsConfig { m, q, seed })
    }

    /// Smallest `m` (up to 10⁶) for which `q = (1 - p) m` is an integer.
    pub fn from_probability(p: f64, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("confidence level {p} outside (0, 1)")));
        }
        for m in 2..=1_000_000usize {
            let q = (1.0 - p) * m as f64;
            let rounded = q.round();
            if rounded >= 1.0 && (q - rounded).abs() < 1e-9 * m as f64 {
                return SpsConfig::new(m, rounded as usize, seed);
            }
        }
        Err(Error::InvalidArgument(format!("confidence level {p} is not a rational with denominator ≤ 10⁶")))
    }

    pub fn p(&self) -> f64 {
        1.0 - self.q as f64 / self.m as f64
    }
}

/// Random signs `α_{i,k}` (row `i - 1` holds `diag(Λ_i)`) and the
/// tie-breaking permutation `π` of `{0, .., m-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpsRandomness {
    signs: Vec<i8>,
    pi: Vec<usize>,
    len: usize,
}

impl SpsRandomness {
    /// Draws `(m-1)·len` Rademacher signs row by row, then a Fisher–Yates
    /// permutation, from one seeded stream.
    pub fn generate(m: usize, len: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let signs = (0..(m - 1) * len).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let mut pi: Vec<usize> = (0..m).collect();
        pi.shuffle(&mut rng);
        SpsRandomness { signs, pi, len }
    }

    pub fn from_parts(signs: Vec<i8>, pi: Vec<usize>, len: usize) -> Result<Self> {
        let m = pi.len();
        if m < 2 || signs.len() != (m - 1) * len {
            return Err(Error::Dimension(format!(
                "{} signs do not form {} rows of length {len}",
                signs.len(),
                m.saturating_sub(1)
            )));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument("signs must be ±1".into()));
        }
        let mut seen = vec![false; m];
        for &p in &pi {
            if p >= m || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("π is not a permutation of 0..m".into()));
            }
        }
        Ok(SpsRandomness { signs, pi, len })
    }

    pub fn m(&self) -> usize {
        self.pi.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Signs of perturbation `i ∈ 1..m`.
    pub fn signs(&self, i: usize) -> &[i8] {
        &self.signs[(i - 1) * self.len..i * self.len]
    }

    pub fn pi(&self) -> &[usize] {
        &self.pi
    }

    /// Strict order `≻_π`: larger value wins, equal values fall back to `π`.
    pub fn precedes(&self, (k, zk): (usize, f64), (j, zj): (usize, f64)) -> bool {
        zk > zj || (zk == zj && self.pi[k] > self.pi[j])
    }
}

/// Squared norms of the `m` sums at one `Θ` and the rank of the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub norms: Vec<f64>,
    pub rank: usize,
}

/// Initialized confidence region: data, randomness and the cached
/// `P = ΨᵀΨ/n`, `P^{±1/2}`, `V = ΨᵀΦ/n` and IV estimate.
#[derive(Debug, Clone)]
pub struct SpsRegion {
    y: DMatrix<f64>,
    phi: DMatrix<f64>,
    psi: DMatrix<f64>,
    config: SpsConfig,
    randomness: SpsRandomness,
    p: DMatrix<f64>,
    p_sqrt: DMatrix<f64>,
    p_inv_sqrt: DMatrix<f64>,
    v: DMatrix<f64>,
    center: DMatrix<f64>,
    // Rows of P^{-1/2} Ψᵀ / n, row-major n x d.
    scaled_psi: Vec<f64>,
}

impl SpsRegion {
    /// Initialization on matrix-variate data; signs are drawn from `config.seed`.
    pub fn init(data: &RegressionData, config: SpsConfig) -> Result<Self> {
        let randomness = SpsRandomness::generate(config.m, data.n(), config.seed);
        Self::init_with(data, config, randomness)
    }

    pub fn init_with(data: &RegressionData, config: SpsConfig, randomness: SpsRandomness) -> Result<Self> {
        Self::from_parts(data.y.clone(), data.phi.clone(), data.psi()?.clone(), config, randomness)
    }

    /// Scalar baseline on the vectorized problem, which needs `n·d_x` signs
    /// per perturbation.
    pub fn init_vectorized(problem: &VectorizedProblem, config: SpsConfig, randomness: SpsRandomness) -> Result<Self> {
        let y = DMatrix::from_column_slice(problem.rows(), 1, problem.y.as_slice());
        Self::from_parts(y, problem.xi.clone(), problem.zeta.clone(), config, randomness)
    }

    fn from_parts(
        y: DMatrix<f64>,
        phi: DMatrix<f64>,
        psi: DMatrix<f64>,
        config: SpsConfig,
        randomness: SpsRandomness,
    ) -> Result<Self> {
        SpsConfig::new(config.m, config.q, config.seed)?;
        let n = y.nrows();
        if phi.nrows() != n || psi.shape() != phi.shape() {
            return Err(Error::Dimension("Y, Φ and Ψ must share the row count and Φ, Ψ the width".into()));
        }
        if randomness.m() != config.m || randomness.len() != n {
            return Err(Error::Dimension(format!(
                "randomness is {}x{} but the region needs m = {} and {n} signs per row",
                randomness.m(),
                randomness.len(),
                config.m
            )));
        }
        let scale = 1.0 / n as f64;
        let psi_t = psi.transpose();
        let p = &psi_t * &psi * scale;
        let v = &psi_t * &phi * scale;
        let condition = condition_number(&v);
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::InstrumentDegeneracy { matrix: "ΨᵀΦ", condition });
        }
        let roots = spd_roots(&p, "P_n")?;
        let center = iv_solve(&y, &phi, &psi)?;
        let scaled = (&roots.inv_sqrt * &psi_t * scale).transpose();
        let d = phi.ncols();
        let scaled_psi = (0..n).flat_map(|k| (0..d).map(move |a| (k, a))).map(|(k, a)| scaled[(k, a)]).collect();
        Ok(SpsRegion {
            y,
            phi,
            psi,
            config,
            randomness,
            p,
            p_sqrt: roots.sqrt,
            p_inv_sqrt: roots.inv_sqrt,
            v,
            center,
            scaled_psi,
        })
    }

    pub fn config(&self) -> &SpsConfig {
        &self.config
    }

    pub fn randomness(&self) -> &SpsRandomness {
        &self.randomness
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    /// Regressor width `d`.
    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    /// Output width (`d_x`, or 1 for the vectorized baseline).
    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn p_n(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_sqrt(&self) -> &DMatrix<f64> {
        &self.p_sqrt
    }

    pub fn p_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.p_inv_sqrt
    }

    pub fn v_n(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub(crate) fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub(crate) fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub(crate) fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// IV estimate, the point where `S_0` vanishes.
    pub fn center(&self) -> &DMatrix<f64> {
        &self.center
    }

    /// Shape map `P^{-1/2} V` of the reference statistic around the center.
    pub fn shape_map(&self) -> DMatrix<f64> {
        &self.p_inv_sqrt * &self.v
    }

    /// Squared norms `|S_i(Θ)|²_F` for `i = 0..m` and the rank of `S_0`.
    pub fn evaluate(&self, theta: &DMatrix<f64>) -> Result<Evaluation> {
        if theta.nrows() != self.d() || theta.ncols() != self.outputs() {
            return Err(Error::Dimension(format!(
                "Θ is {}x{}, expected {}x{}",
                theta.nrows(),
                theta.ncols(),
                self.d(),
                self.outputs()
            )));
        }
        let (n, d, c) = (self.n(), self.d(), self.outputs());
        let resid = &self.y - &self.phi * theta;
        let resid_rows: Vec<f64> =
            (0..n).flat_map(|k| (0..c).map(move |b| (k, b))).map(|(k, b)| resid[(k, b)]).collect();

        let mut sum = vec![0.0; d * c];
        let mut norm_of = |signs: Option<&[i8]>| -> f64 {
            sum.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..n {
                let s = signs.map_or(1.0, |s| s[k] as f64);
                let psi_k = &self.scaled_psi[k * d..(k + 1) * d];
                let e_k = &resid_rows[k * c..(k + 1) * c];
                for (a, &pa) in psi_k.iter().enumerate() {
                    let w = s * pa;
                    for (b, &eb) in e_k.iter().enumerate() {
                        sum[a * c + b] += w * eb;
                    }
                }
            }
            sum.iter().map(|v| v * v).sum()
        };

        let m = self.config.m;
        let mut norms = Vec::with_capacity(m);
        norms.push(norm_of(None));
        for i in 1..m {
            norms.push(norm_of(Some(self.randomness.signs(i))));
        }
        let reference = (0, norms[0]);
        let rank = 1 + (1..m).filter(|&i| self.randomness.precedes(reference, (i, norms[i]))).count();
        Ok(Evaluation { norms, rank })
    }

    /// Membership: rank of the reference sum at most `m - q`.
    pub fn indicator(&self, theta: &DMatrix<f64>) -> Result<bool> {
        Ok(self.evaluate(theta)?.rank <= self.config.m - self.config.q)
    }

    pub fn contains(&self, theta: &ParameterMatrix) -> Result<bool> {
        self.indicator(&theta.0)
    }
}

/// One-shot scalar baseline indicator at a vectorized parameter.
pub fn scalar_indicator(
    problem: &VectorizedProblem,
    config: SpsConfig,
    randomness: SpsRandomness,
    theta: &DVector<f64>,
) -> Result<bool> {
    let region = SpsRegion::init_vectorized(problem, config, randomness)?;
    region.indicator(&DMatrix::from_column_slice(theta.len(), 1, theta.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_sq;
    use crate::model::{random_stable_system, simulate, synthesize_lqr, NoiseModel, SystemSpec};
    use crate::regression::{build, build_instruments, vectorize, Mode};

    fn region(d: usize, n: usize, seed: u64, config: SpsConfig) -> (SpsRegion, RegressionData, ParameterMatrix) {
        let (a, b) = random_stable_system(d, d, 0.9, seed).unwrap();
        let k = synthesize_lqr(&a, &b, 1.0, 1.0).unwrap();
        let spec = SystemSpec::new(a, b, k, 0.3, NoiseModel::standard_gaussian()).unwrap();
        let traj = simulate(&spec, n, &DVector::zeros(d), seed).unwrap();
        let (data, truth) = build(&traj, &spec, Mode::Direct).unwrap();
        let data = build_instruments(&data, &traj).unwrap();
        (SpsRegion::init(&data, config).unwrap(), data, truth)
    }

    #[test]
    fn config_from_probability() {
        let c = SpsConfig::from_probability(0.9, 0).unwrap();
        assert_eq!((c.m, c.q), (10, 1));
        let c = SpsConfig::from_probability(0.95, 0).unwrap();
        assert_eq!((c.m, c.q), (20, 1));
        let c = SpsConfig::new(20, 2, 0).unwrap();
        assert!((c.p() - 0.9).abs() < 1e-15);
        assert!(SpsConfig::new(10, 10, 0).is_err());
        assert!(SpsConfig::new(10, 0, 0).is_err());
        assert_eq!(SpsConfig::default().p(), 0.9);
    }

    #[test]
    fn randomness_is_deterministic_and_valid() {
        let r1 = SpsRandomness::generate(20, 30, 5);
        assert_eq!(r1, SpsRandomness::generate(20, 30, 5));
        assert_ne!(r1, SpsRandomness::generate(20, 30, 6));
        let mut pi = r1.pi().to_vec();
        pi.sort();
        assert_eq!(pi, (0..20).collect::<Vec<_>>());
        assert!(SpsRandomness::from_parts(vec![1, -1], vec![0, 0], 2).is_err());
        assert!(SpsRandomness::from_parts(vec![1, 2], vec![1, 0], 2).is_err());
        assert!(SpsRandomness::from_parts(vec![1, -1], vec![1, 0], 2).is_ok());
    }

    #[test]
    fn square_root_identity() {
        let (region, _, _) = region(3, 100, 1, SpsConfig::default());
        let back = region.p_sqrt() * region.p_sqrt();
        assert!((back - region.p_n()).norm() <= 1e-10 * region.p_n().norm());
    }

    #[test]
    fn orthogonal_instruments_give_identity_p() {
        // Ψ with orthogonal columns scaled so ΨᵀΨ = n I.
        let n = 4;
        let psi = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let phi = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 0.3, -1.0, -0.7, 0.2, -0.4, -0.9]);
        let y = DMatrix::from_row_slice(4, 1, &[0.3, -0.1, 0.7, 0.2]);
        let data = RegressionData::new(y, phi, Some(psi), Mode::Direct).unwrap();
        let region = SpsRegion::init(&data, SpsConfig::new(4, 1, 0).unwrap()).unwrap();
        assert!((region.p_n() - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!((region.p_inv_sqrt() - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert_eq!(region.n(), n);
    }

    #[test]
    fn hand_computed_small_instance() {
        let y = DMatrix::from_row_slice(4, 1, &[0.5, -1.2, 0.3, 0.8]);
        let phi = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, -0.4, 1.1, 0.9, -0.3, 0.1, 0.6]);
        let psi = DMatrix::from_row_slice(4, 2, &[0.8, 0.1, -0.5, 1.0, 1.2, -0.2, 0.3, 0.4]);
        let data = RegressionData::new(y.clone(), phi.clone(), Some(psi.clone()), Mode::Direct).unwrap();
        let signs = vec![1, -1, 1, 1, -1, -1, 1, -1, 1, 1, 1, 1];
        let pi = vec![2, 0, 3, 1];
        let randomness = SpsRandomness::from_parts(signs.clone(), pi, 4).unwrap();
        let region = SpsRegion::init_with(&data, SpsConfig::new(4, 1, 0).unwrap(), randomness).unwrap();
        let theta = DMatrix::from_row_slice(2, 1, &[0.2, -0.3]);
        let eval = region.evaluate(&theta).unwrap();

        // Independent evaluation: explicit Λ_i and an eigen-free inverse
        // square root of the 2x2 P through the closed form
        // sqrt(P) = (P + sqrt(det P) I) / sqrt(tr P + 2 sqrt(det P)).
        let p = psi.transpose() * &psi / 4.0;
        let det = p.determinant();
        let s = (p.trace() + 2.0 * det.sqrt()).sqrt();
        let sqrt_p = (&p + DMatrix::identity(2, 2) * det.sqrt()) / s;
        let inv_sqrt = sqrt_p.try_inverse().unwrap();
        let e = &y - &phi * &theta;
        for i in 0..4 {
            let lambda = if i == 0 {
                DMatrix::identity(4, 4)
            } else {
                DMatrix::from_diagonal(&DVector::from_iterator(4, signs[(i - 1) * 4..i * 4].iter().map(|&v| v as f64)))
            };
            let s_i = &inv_sqrt * psi.transpose() * lambda * &e / 4.0;
            assert!((frobenius_sq(&s_i) - eval.norms[i]).abs() < 1e-14, "i = {i}");
        }
        // Row 3 is all +1, so S_3 = S_0 and π(0) = 2 > π(3) = 1 decides.
        assert_eq!(eval.norms[3], eval.norms[0]);
        let pi = [2, 0, 3, 1];
        let beats = |i: usize| eval.norms[0] > eval.norms[i] || (eval.norms[0] == eval.norms[i] && pi[0] > pi[i]);
        assert_eq!(eval.rank, 1 + (1..4).filter(|&i| beats(i)).count());
        assert_eq!(eval.rank, 1 + (1..3).filter(|&i| eval.norms[0] > eval.norms[i]).count() + 1);
    }

    #[test]
    fn iv_estimate_has_zero_reference_and_is_inside() {
        let (region, _, _) = region(2, 200, 3, SpsConfig::default());
        let eval = region.evaluate(region.center()).unwrap();
        assert!(eval.norms[0] < 1e-20 * eval.norms[1..].iter().cloned().fold(0.0, f64::max));
        assert_eq!(eval.rank, 1);
        assert!(region.indicator(region.center()).unwrap());
    }

    #[test]
    fn far_parameter_is_rejected() {
        let (region, _, truth) = region(2, 300, 4, SpsConfig::default());
        let far = &truth.0 + DMatrix::from_element(4, 2, 1e6);
        assert!(!region.indicator(&far).unwrap());
    }

    #[test]
    fn all_plus_signs_tie_and_defer_to_permutation() {
        let (_, data, truth) = region(2, 60, 5, SpsConfig::default());
        let m = 8;
        let mut pi: Vec<usize> = (0..m).collect();
        pi.reverse();
        let randomness = SpsRandomness::from_parts(vec![1; (m - 1) * 60], pi.clone(), 60).unwrap();
        let region = SpsRegion::init_with(&data, SpsConfig::new(m, 2, 0).unwrap(), randomness).unwrap();
        let eval = region.evaluate(&truth.0).unwrap();
        assert!(eval.norms.iter().all(|&v| v == eval.norms[0]));
        // π(0) = m-1 beats every other index.
        assert_eq!(eval.rank, m);
        let randomness = SpsRandomness::from_parts(vec![1; (m - 1) * 60], (0..m).collect(), 60).unwrap();
        let region = SpsRegion::init_with(&data, SpsConfig::new(m, 2, 0).unwrap(), randomness).unwrap();
        assert_eq!(region.evaluate(&truth.0).unwrap().rank, 1);
    }

    #[test]
    fn reference_norm_is_a_quadratic_around_the_center() {
        let (region, _, truth) = region(3, 150, 6, SpsConfig::default());
        let map = region.shape_map();
        let mut rng = seed::rng(2);
        for _ in 0..20 {
            let theta = &truth.0 + DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>() - 0.5);
            let eval = region.evaluate(&theta).unwrap();
            let quad = frobenius_sq(&(&map * (&theta - region.center())));
            assert!((eval.norms[0] - quad).abs() <= 1e-9 * quad);
        }
    }

    #[test]
    fn scalar_output_baseline_coincides() {
        let (_, data, truth) = region(1, 80, 7, SpsConfig::default());
        let config = SpsConfig { seed: 11, ..SpsConfig::default() };
        let vec = vectorize(&data).unwrap();
        let matrix_region = SpsRegion::init(&data, config).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..50 {
            let theta = &truth.0 + DMatrix::from_fn(2, 1, |_, _| 0.2 * (rng.random::<f64>() - 0.5));
            let randomness = SpsRandomness::generate(config.m, vec.rows(), config.seed);
            let scalar = scalar_indicator(&vec, config, randomness, &theta.column(0).into_owned()).unwrap();
            assert_eq!(scalar, matrix_region.indicator(&theta).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (region, _, _) = region(2, 50, 8, SpsConfig::default());
        assert!(matches!(region.evaluate(&DMatrix::zeros(3, 2)), Err(Error::Dimension(_))));
        let other = SpsRandomness::generate(100, 49, 0);
        let (_, data, _) = self::region(2, 50, 8, SpsConfig::default());
        assert!(SpsRegion::init_with(&data, SpsConfig::default(), other).is_err());
    }
}
