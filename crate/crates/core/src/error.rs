use std::path::PathBuf;

/// Errors raised by the estimation laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigenvalue iteration did not converge after {iterations} sweeps (matrix order {order})")]
    NoConvergence { order: usize, iterations: usize },

    #[error("root-MUSIC found {found} valid roots, {needed} required")]
    RootShortfall { found: usize, needed: usize },

    #[error("steering matrix is rank deficient (smallest Gram eigenvalue {min_eigenvalue:e}); paths are unresolvable")]
    UnresolvablePaths { min_eigenvalue: f64 },

    #[error("prior density vanishes at {point:?}; region lies outside the support")]
    OutsideSupport { point: Vec<f64> },

    #[error("log-gap underflow: only {remaining} usable grid points remain")]
    SlopeUnderflow { remaining: usize },

    #[error("could not draw a realization satisfying the angle separation after {attempts} attempts")]
    SeparationRejected { attempts: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: malformed record: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
