use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpmError {
    #[error("invalid material parameters: {0}")]
    MaterialDomain(String),

    /// det(F) at or below the admissibility threshold.
    #[error("singular deformation: det(F) = {det:e}")]
    SingularDeformation { det: f64 },

    #[error("matrix is singular to working precision")]
    SingularMatrix,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node index {index:?} out of range (nodes per dimension: {nodes_per_dim})")]
    IndexOutOfRange {
        index: Vec<usize>,
        nodes_per_dim: usize,
    },

    #[error("position {position:?} violates the grid interior margin")]
    OutOfDomain { position: Vec<f64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
}

pub type Result<T, E = MpmError> = std::result::Result<T, E>;

/// Errors surfaced by whole runs and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error(transparent)]
    Numerical(#[from] MpmError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file contents.
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    /// Process exit code: 1 for invalid input, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format { .. } => 1,
            Error::Numerical(_) | Error::Io { .. } => 2,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
