use thiserror::Error;

/// Errors raised by the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("underdetermined problem: {rows} samples for {params} regressors")]
    Underdetermined { rows: usize, params: usize },

    #[error("instrument degeneracy: {matrix} is singular or ill-conditioned (condition number {condition:e})")]
    InstrumentDegeneracy { matrix: &'static str, condition: f64 },

    #[error("matrix {0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("unstable trajectory: state norm {norm:e} exceeded the guard at step {step}")]
    UnstableTrajectory { step: usize, norm: f64 },

    #[error("closed loop is unstable: spectral radius {0}")]
    UnstableClosedLoop(f64),

    #[error("Riccati iteration failed: {0}")]
    Riccati(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures that stem from a particular data draw rather than
    /// from a malformed request; Monte Carlo trials re-seed on these.
    pub fn is_degenerate_draw(&self) -> bool {
        matches!(
            self,
            Error::InstrumentDegeneracy { .. }
                | Error::NotPositiveDefinite(_)
                | Error::UnstableTrajectory { .. }
                | Error::UnstableClosedLoop(_)
                | Error::Riccati(_)
        )
    }
}
