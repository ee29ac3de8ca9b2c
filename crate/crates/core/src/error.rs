use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("fields or data live on different domains")]
    DomainMismatch,
    #[error("singular factorization at pivot {pivot} ({location})")]
    Singular { pivot: usize, location: String },
    #[error("operator numerically singular: condition estimate {0:.3e} exceeds threshold")]
    IllConditioned(f64),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("pipeline order violated: {0}")]
    PipelineOrder(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical solver itself, as opposed to bad inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::IllConditioned(_) | Error::NoConvergence(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
