//! Closed-loop stochastic linear state-space model, noise families, LQR
//! synthesis and trajectory simulation.
//!
//! The plant is `x[k+1] = A x[k] + B u[k] + w[k]` driven by the mixed
//! exploitation/exploration law `u[k] = ε K x[k] + (1 - ε) r[k]`, with
//! standard-normal references `r[k]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::seed;

/// States whose Euclidean norm exceeds this abort the simulation.
pub const STATE_GUARD: f64 = 1e12;

/// Process-noise families. Every variant is symmetric about zero as a vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `w ~ N(0, sigma² I)`.
    Gaussian { sigma: f64 },
    /// Equal-weight mixture of `N(mu·1, sigma_w I)` and `N(-mu·1, sigma_w I)`.
    /// Both coordinates share the mixture sign, so the law is jointly but not
    /// axially symmetric.
    BimodalGaussian { mu: f64, sigma_w: f64 },
    /// Equal-weight mixture of Laplace laws centred at `±5 (k+1)/n · 1` with
    /// per-coordinate scale `(k+1)/n + sigma_w`; non-stationary over `k`.
    TimeVaryingLaplacian { sigma_w: f64, horizon: usize },
}

impl NoiseModel {
    pub fn standard_gaussian() -> Self {
        NoiseModel::Gaussian { sigma: 1.0 }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            NoiseModel::Gaussian { .. } => "gaussian",
            NoiseModel::BimodalGaussian { .. } => "bimodal_gaussian",
            NoiseModel::TimeVaryingLaplacian { .. } => "time_varying_laplacian",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseModel::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseModel::BimodalGaussian { mu, sigma_w } => mu.is_finite() && sigma_w > 0.0,
            NoiseModel::TimeVaryingLaplacian { sigma_w, horizon } => sigma_w > 0.0 && horizon > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid noise parameters {self:?}")))
        }
    }

    /// Same family re-targeted at a new sample size (only the Laplacian
    /// mixture depends on the horizon).
    pub fn with_horizon(self, n: usize) -> Self {
        match self {
            NoiseModel::TimeVaryingLaplacian { sigma_w, .. } => {
                NoiseModel::TimeVaryingLaplacian { sigma_w, horizon: n }
            }
            other => other,
        }
    }

    /// Draws the noise vector for time index `k`.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, dim: usize, rng: &mut R) -> DVector<f64> {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                DVector::from_fn(dim, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
            }
            NoiseModel::BimodalGaussian { mu, sigma_w } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let sd = sigma_w.sqrt();
                DVector::from_fn(dim, |_, _| sign * mu + sd * rng.sample::<f64, _>(StandardNormal))
            }
            NoiseModel::TimeVaryingLaplacian { sigma_w, horizon } => {
                let t = (k + 1) as f64 / horizon as f64;
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let loc = sign * 5.0 * t;
                let scale = t + sigma_w;
                DVector::from_fn(dim, |_, _| loc + laplace(scale, rng))
            }
        }
    }
}

fn laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    // Inverse CDF on u ∈ (-1/2, 1/2).
    let u: f64 = rng.random::<f64>() - 0.5;
    let mag = -(1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
    scale * mag.copysign(u)
}

/// True system together with the feedback law and the noise law.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Feedback gain, `u = K x` at full exploitation.
    pub k: DMatrix<f64>,
    /// Exploitation rate in `[0, 1]`.
    pub epsilon: f64,
    pub noise: NoiseModel,
}

impl SystemSpec {
    /// Validates dimensions, `ε ∈ [0, 1]` and closed-loop stability.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, k: DMatrix<f64>, epsilon: f64, noise: NoiseModel) -> Result<Self> {
        let d_x = a.nrows();
        if a.ncols() != d_x || d_x == 0 {
            return Err(Error::Dimension(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != d_x || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {d_x}xd_u, got {}x{}", b.nrows(), b.ncols())));
        }
        if k.nrows() != b.ncols() || k.ncols() != d_x {
            return Err(Error::Dimension(format!("K must be {}x{d_x}, got {}x{}", b.ncols(), k.nrows(), k.ncols())));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
        }
        noise.validate()?;
        let spec = SystemSpec { a, b, k, epsilon, noise };
        let radius = spectral_radius(&spec.closed_loop());
        if !(radius < 1.0) {
            return Err(Error::UnstableClosedLoop(radius));
        }
        Ok(spec)
    }

    pub fn d_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.b.ncols()
    }

    /// Reference dimension; the input law feeds `r` straight into `u`.
    pub fn d_r(&self) -> usize {
        self.d_u()
    }

    /// State feedback matrix `F = ε K`.
    pub fn feedback(&self) -> DMatrix<f64> {
        &self.k * self.epsilon
    }

    /// Reference gain `G = (1 - ε) I`.
    pub fn reference_gain(&self) -> DMatrix<f64> {
        DMatrix::identity(self.d_u(), self.d_r()) * (1.0 - self.epsilon)
    }

    /// `C = A + B F`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * self.feedback()
    }

    /// `D = B G`.
    pub fn closed_loop_input(&self) -> DMatrix<f64> {
        &self.b * self.reference_gain()
    }

    fn input(&self, x: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        &self.k * x * self.epsilon + r * (1.0 - self.epsilon)
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }
}

/// Simulated closed-loop data. Row `k` of each matrix holds the sample at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(n+1) x d_x`, rows `x_0 .. x_n`.
    pub states: DMatrix<f64>,
    /// `n x d_u`.
    pub inputs: DMatrix<f64>,
    /// `n x d_r`.
    pub references: DMatrix<f64>,
    /// `n x d_x`, kept for diagnostics.
    pub noises: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    /// Recomputes every state transition and input from the stored
    /// quantities and checks them bit for bit against the stored sequence.
    pub fn replays_exactly(&self, spec: &SystemSpec) -> bool {
        (0..self.len()).all(|k| {
            let x = self.state(k);
            let r = self.references.row(k).transpose();
            let u = spec.input(&x, &r);
            let w = self.noises.row(k).transpose();
            u == self.inputs.row(k).transpose() && spec.step(&x, &u, &w) == self.state(k + 1)
        })
    }
}

/// Simulates `n` steps from `x0` with standard-normal references.
pub fn simulate(spec: &SystemSpec, n: usize, x0: &DVector<f64>, seed: u64) -> Result<Trajectory> {
    let references = {
        let mut rng = seed::rng(seed::derive(seed, &[0]));
        DMatrix::from_fn(n, spec.d_r(), |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    simulate_with_references(spec, x0, references, seed)
}

/// Simulates with a caller-supplied reference sequence (`n x d_r`); the
/// noise stream is still derived from `seed`.
pub fn simulate_with_references(
    spec: &SystemSpec,
    x0: &DVector<f64>,
    references: DMatrix<f64>,
    seed: u64,
) -> Result<Trajectory> {
    let n = references.nrows();
    let (d_x, d_u) = (spec.d_x(), spec.d_u());
    if n == 0 {
        return Err(Error::InvalidArgument("simulation horizon must be at least 1".into()));
    }
    if x0.len() != d_x || references.ncols() != spec.d_r() {
        return Err(Error::Dimension("initial state or reference width does not match the system".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, &[1]));
    let mut states = DMatrix::zeros(n + 1, d_x);
    let mut inputs = DMatrix::zeros(n, d_u);
    let mut noises = DMatrix::zeros(n, d_x);
    states.set_row(0, &x0.transpose());
    let mut x = x0.clone();
    for k in 0..n {
        let r = references.row(k).transpose();
        let w = spec.noise.sample(k, d_x, &mut rng);
        let u = spec.input(&x, &r);
        let next = spec.step(&x, &u, &w);
        let norm = next.norm();
        if !(norm <= STATE_GUARD) {
            return Err(Error::UnstableTrajectory { step: k + 1, norm });
        }
        inputs.set_row(k, &u.transpose());
        noises.set_row(k, &w.transpose());
        states.set_row(k + 1, &next.transpose());
        x = next;
    }
    Ok(Trajectory { states, inputs, references, noises })
}

/// Draws `A = M ρ_target / ρ(M)` with standard-normal `M` and `B` with
/// entries uniform on `[1, 10]`.
pub fn random_stable_system(
    d_x: usize,
    d_u: usize,
    target_radius: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(target_radius > 0.0 && target_radius < 1.0) {
        return Err(Error::InvalidArgument(format!("target radius {target_radius} outside (0, 1)")));
    }
    if d_x == 0 || d_u == 0 {
        return Err(Error::Dimension("system dimensions must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    let a = loop {
        let m = DMatrix::from_fn(d_x, d_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&m);
        if rho > 0.0 && rho.is_finite() {
            break m * (target_radius / rho);
        }
    };
    let unif = Uniform::new_inclusive(1.0, 10.0).expect("valid range");
    let b = DMatrix::from_fn(d_x, d_u, |_, _| unif.sample(&mut rng));
    Ok((a, b))
}

/// Relative tolerance of the Riccati fixed-point iteration.
pub const DARE_TOLERANCE: f64 = 1e-12;
/// Iteration budget of the Riccati fixed-point iteration.
pub const DARE_MAX_ITER: usize = 100_000;

/// Infinite-horizon discrete LQR gain for the cost `Σ q|x|² + v|u|²`.
///
/// The returned gain already carries the minus sign, so the optimal input is
/// `u = K x`. The Riccati equation is solved by fixed-point iteration from
/// `P = Q`.
pub fn synthesize_lqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q_weight: f64, v_weight: f64) -> Result<DMatrix<f64>> {
    let d_x = a.nrows();
    if a.ncols() != d_x || b.nrows() != d_x {
        return Err(Error::Dimension("A must be square and B must have as many rows as A".into()));
    }
    if !(q_weight > 0.0 && v_weight > 0.0) {
        return Err(Error::InvalidArgument("LQR weights must be positive".into()));
    }
    let d_u = b.ncols();
    let q = DMatrix::<f64>::identity(d_x, d_x) * q_weight;
    let r = DMatrix::<f64>::identity(d_u, d_u) * v_weight;
    let at = a.transpose();
    let bt = b.transpose();

    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = &r + &bt * p * b;
        s.cholesky()
            .map(|c| -c.solve(&(&bt * p * a)))
            .ok_or_else(|| Error::Riccati("R + BᵀPB lost positive definiteness".into()))
    };

    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..DARE_MAX_ITER {
        // P⁺ = Q + AᵀPA + AᵀPB K  with  K = -(R + BᵀPB)⁻¹BᵀPA.
        let k = gain(&p)?;
        let mut next = &q + &at * &p * a + &at * &p * b * k;
        next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Riccati("iterates diverged; (A, B) is likely not stabilizable".into()));
        }
        let delta = (&next - &p).norm();
        p = next;
        if delta <= DARE_TOLERANCE * p.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Riccati(format!("no convergence within {DARE_MAX_ITER} iterations")));
    }
    let k = gain(&p)?;
    let rho = spectral_radius(&(a + b * &k));
    if !(rho < 1.0) {
        return Err(Error::Riccati(format!(
            "resulting closed loop is not stable (spectral radius {rho}); (A, B) is not stabilizable"
        )));
    }
    Ok(k)
}
