use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty observation sequence")]
    EmptySequence,

    #[error("category out of range: observation {value} with {num_categories} categories")]
    CategoryOutOfRange { value: usize, num_categories: usize },

    #[error("prediction target coincides with last observation")]
    ZeroGap,

    #[error("insufficient data for transition estimation")]
    InsufficientData,

    #[error("observation sequence has zero probability under the model")]
    ZeroLikelihood,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss in {0}")]
    NonFiniteLoss(&'static str),

    #[error("insufficient candidates: need {needed}, have {available}")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("replay buffer holds {size} transitions, batch needs {batch}")]
    Underfilled { size: usize, batch: usize },

    #[error("client {client} is outside the coverage of server {server}")]
    OutOfCoverage { client: usize, server: usize },

    #[error("dataset has {samples} samples, fewer than {clients} clients")]
    DatasetTooSmall { samples: usize, clients: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("mismatched topologies: {0}")]
    TopologyMismatch(String),

    #[error("round {round}, server {server}: {source}")]
    Round {
        round: u64,
        server: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attaches round and server context to an error raised inside a round.
    pub fn in_round(self, round: u64, server: usize) -> Error {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                server,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
