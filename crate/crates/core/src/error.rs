use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("checkpoint architecture mismatch: expected hash {expected:016x}, found {found:016x}")]
    ArchMismatch { expected: u64, found: u64 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at update {update}: critic loss {loss} above {ceiling} for {streak} consecutive updates")]
    Diverged {
        update: u64,
        loss: f64,
        ceiling: f64,
        streak: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("action out of bounds: {0}")]
    InvalidAction(String),

    #[error("episode already terminated; call reset first")]
    EpisodeTerminated,

    #[error("could not find a collision-free start pose after {0} attempts")]
    StartPose(usize),

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
