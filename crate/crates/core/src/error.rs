use thiserror::Error;

/// Errors raised anywhere in the solver or the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of an operation (bad mass, wrong sizes, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Internal consistency check failed while building a derived object.
    #[error("construction error: {0}")]
    Construction(String),

    /// Overlap matrix has no eigenvalue above the linear-dependence cutoff.
    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    /// Experiment configuration rejected; every offending field is listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
