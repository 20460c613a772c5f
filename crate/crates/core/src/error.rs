use thiserror::Error;

/// Errors raised by model construction, simulation and the statistical suites.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(
        "integration failed after {halvings} step halvings: energy drift {drift:.3e} \
         exceeds tolerance {tolerance:.3e} (t={t}, k={k}, dt={dt})"
    )]
    IntegrationFailure {
        halvings: u32,
        drift: f64,
        tolerance: f64,
        t: f64,
        k: f64,
        dt: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{failed} of {total} trajectories failed; first failure: {first}")]
    EnsembleFailure {
        failed: usize,
        total: usize,
        first: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
