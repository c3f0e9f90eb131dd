use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite action {value} for agent {agent}")]
    NonFiniteAction { agent: usize, value: f64 },
    #[error("agent {0} is not departing; terminal SoC reward is undefined")]
    NotDeparting(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("replay buffer holds {have} transitions, {need} requested")]
    InsufficientSamples { have: usize, need: usize },
    #[error("invalid topology parameters: {0}")]
    InvalidTopology(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
