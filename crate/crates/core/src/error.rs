use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value whose fixed-point encoding does not fit the signed range of Z_N.
    #[error("value {value} outside encodable range: |x|*F must stay below {limit}")]
    EncodingRange { value: f64, limit: u64 },

    #[error("invalid group parameters: {0}")]
    InvalidGroup(String),

    #[error("aggregation input mismatch: {0}")]
    AggregationMismatch(String),

    #[error("unknown endpoint {0}")]
    UnknownEndpoint(usize),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed message: {0}")]
    Wire(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
