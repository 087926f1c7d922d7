//! Finite-sample, distribution-free confidence regions for the system
//! matrices of closed-loop stochastic linear state-space models.
//!
//! The pipeline: [`model`] simulates a plant under mixed feedback,
//! [`regression`] turns the trajectory into a matrix-variate regression with
//! instrumental variables, [`sps`] evaluates the sign-perturbed-sums
//! indicator, [`eoa`] bounds the region by an ellipsoid, and [`mc`] runs the
//! Monte Carlo coverage studies.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chi2;
pub mod config;
pub mod eoa;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod regression;
pub mod seed;
pub mod sps;

pub use eoa::{outer_approximation, vectorized_outer_approximation, DualInstance, DualSolution, Ellipsoid};
pub use error::{Error, Result};
pub use estimators::{asymptotic_region, iv_estimate, ls_estimate, AsymptoticEllipsoid};
pub use model::{random_stable_system, simulate, synthesize_lqr, NoiseModel, SystemSpec, Trajectory};
pub use regression::{
    build_direct, build_indirect, build_instruments, vectorize, Mode, ParameterMatrix, RegressionData,
    VectorizedProblem,
};
pub use sps::{scalar_indicator, Evaluation, SpsConfig, SpsRandomness, SpsRegion};
