use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is outside the domain: {0}")]
    DomainMembership(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("point on or too close to the boundary: {0}")]
    Boundary(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate pole: {0}")]
    DegeneratePole(String),
    #[error("environment contract violated: {0}")]
    EnvironmentContract(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("flow error: {0}")]
    Flow(String),
    #[error("bound spec error: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
