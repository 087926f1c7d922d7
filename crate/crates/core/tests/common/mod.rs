#![allow(dead_code)]

use mivsps::eoa::DualInstance;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn unit_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let z = gaussian_matrix(rows, cols, rng);
    let norm = z.norm();
    z / norm
}

/// Largest `|tZ|²_F` with `t ≥ 0` and `tZ` feasible, for a unit-norm `Z`.
/// The constraint along the ray is `a t² + 2 b t + c ≤ 0` with `c ≤ 0`.
/// `None` when the ray never leaves the feasible set.
pub fn ray_max(inst: &DualInstance, z: &DMatrix<f64>) -> Option<f64> {
    let a = (z.transpose() * &inst.a * z).trace();
    let b = (z.transpose() * &inst.b).trace();
    let c = inst.c.trace();
    if a <= 0.0 {
        return if a < 0.0 || b > 0.0 { None } else { Some(0.0) };
    }
    let disc = (b * b - a * c).max(0.0);
    let t = (-b + disc.sqrt()) / a;
    Some(t.max(0.0).powi(2))
}

/// Random-search plus hill-climbing lower bound on the primal maximum of
/// `|Z|²_F` subject to the quadratic constraint; `+∞` if an unbounded ray
/// is found.
pub fn primal_search<R: Rng>(inst: &DualInstance, samples: usize, refine: usize, rng: &mut R) -> f64 {
    let (d, c) = inst.b.shape();
    let mut best = 0.0;
    let mut best_dir = unit_matrix(d, c, rng);
    for _ in 0..samples {
        let z = unit_matrix(d, c, rng);
        match ray_max(inst, &z) {
            None => return f64::INFINITY,
            Some(v) if v > best => {
                best = v;
                best_dir = z;
            }
            _ => {}
        }
    }
    let mut step = 0.1;
    for _ in 0..refine {
        let mut z = &best_dir + gaussian_matrix(d, c, rng) * step;
        let norm = z.norm();
        z /= norm;
        match ray_max(inst, &z) {
            None => return f64::INFINITY,
            Some(v) if v > best => {
                best = v;
                best_dir = z;
            }
            _ => step = (step * 0.97).max(1e-6),
        }
    }
    best
}

/// Upper `α` critical value of the chi-square distribution.
pub fn chi2_critical(alpha: f64, dof: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof as f64).unwrap().inverse_cdf(1.0 - alpha)
}

/// Pearson statistic of counts against the uniform distribution.
pub fn uniform_chi2(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum()
}

/// Three binomial standard errors around `p` with `s` trials.
pub fn within_three_se(p_hat: f64, p: f64, s: usize) -> bool {
    (p_hat - p).abs() <= 3.0 * (p * (1.0 - p) / s as f64).sqrt()
}
