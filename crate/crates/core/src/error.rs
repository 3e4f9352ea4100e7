use thiserror::Error;

/// Errors produced by the CLAIR pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClairError {
    #[error("invalid client pair ({j}, {k}) for K = {clients}")]
    InvalidPair { j: usize, k: usize, clients: usize },

    #[error("pair position {g} out of range for K = {clients}")]
    InvalidPairPosition { g: usize, clients: usize },

    #[error("at least two clients are required, got {0}")]
    InsufficientClients(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid rank {rank} for a {rows}x{cols} matrix")]
    Rank { rank: usize, rows: usize, cols: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("solver diverged at iteration {0}")]
    Divergence(usize),

    #[error("collaborative set is empty")]
    EmptyCollaborativeSet,

    #[error("ill-posed least squares: {0}")]
    IllPosed(String),

    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl ClairError {
    pub(crate) fn dims(expected: (usize, usize), found: (usize, usize)) -> Self {
        ClairError::Dimension {
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClairError>;
