use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("inadmissible Hurst pair (h1={h1}, h2={h2}): {reason}")]
    Hurst { h1: f64, h2: f64, reason: String },

    #[error("accuracy failure: {0}")]
    Accuracy(String),

    #[error("ill-conditioned system (condition estimate {condition:.3e}); 1/lambda is close to an eigenvalue of -K")]
    IllConditioned { condition: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("replicate {replicate} (seed {seed}) failed: {source}")]
    Replicate {
        replicate: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn accuracy(msg: impl Into<String>) -> Self {
        Error::Accuracy(msg.into())
    }

    /// Domain-type errors map to CLI exit code 2, numerical failures to 3.
    pub fn is_domain(&self) -> bool {
        match self {
            Error::Domain(_) | Error::Hurst { .. } => true,
            Error::Replicate { source, .. } => source.is_domain(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
