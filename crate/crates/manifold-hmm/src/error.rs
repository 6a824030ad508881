use thiserror::Error;

use crate::manifold::ManifoldKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifold kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: ManifoldKind,
        found: ManifoldKind,
    },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op} is not supported on {kind}")]
    UnsupportedKind {
        op: &'static str,
        kind: ManifoldKind,
    },

    #[error("invalid model: {}", violations.join("; "))]
    InvalidModel { violations: Vec<String> },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("all {n_states} emission densities underflowed at step {step}")]
    DegenerateEmission { step: usize, n_states: usize },

    #[error("zero denominator in {what} at window position {position}")]
    ZeroDenominator {
        what: &'static str,
        position: usize,
    },

    #[error("non-finite {what} at entries {indices:?}")]
    NonFinite {
        what: &'static str,
        indices: Vec<(usize, usize)>,
    },

    #[error("delta {delta} is outside the invertible range [{lo}, {hi}]")]
    DeltaOutOfRange { delta: f64, lo: f64, hi: f64 },

    #[error("clusters {missing:?} received no points")]
    MissingClusters { missing: Vec<usize> },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::InvalidModel { .. } => 1,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            _ => 2,
        }
    }
}
