use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("distance must be positive, got {0} km")]
    NonPositiveDistance(f64),

    #[error("receiver placement failed in cell {cell} after {attempts} attempts (r too close to the cell size)")]
    PlacementFailed { cell: usize, attempts: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("instance too large for exhaustive search: {levels}^{links} allocations")]
    InstanceTooLarge { levels: usize, links: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("spectral efficiency average must be positive (link {link}: {value})")]
    NonPositiveRate { link: usize, value: f64 },

    #[error("replay memory is empty")]
    EmptyMemory,

    #[error("empty sample")]
    EmptySample,

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
