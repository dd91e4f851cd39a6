use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Cholesky factorization failed even at the largest allowed jitter.
    #[error("matrix of size {size} could not be factorized with jitter up to {jitter_cap:e}; knots too dense for the length scale?")]
    ConditioningFailure { size: usize, jitter_cap: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("knot {knot} duplicates an existing knot within {tol:e}")]
    DuplicateKnot { knot: f64, tol: f64 },

    #[error("x = {x} lies outside [0, 1]")]
    OutOfDomain { x: f64 },

    #[error("data points {first} and {second} both map to knot {knot}")]
    DataCollision { first: f64, second: f64, knot: f64 },

    #[error("constraint set and interpolation conditions have empty intersection")]
    Infeasible,

    #[error("solver reached the iteration limit ({iterations})")]
    MaxIter { iterations: usize },

    #[error("truncation polytope is empty")]
    InfeasiblePolytope,

    #[error("Gibbs sweep found an empty interval for coordinate {coordinate}: [{lower}, {upper}]")]
    StallDetected {
        coordinate: usize,
        lower: f64,
        upper: f64,
    },

    #[error("sample batch is empty")]
    EmptyBatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
