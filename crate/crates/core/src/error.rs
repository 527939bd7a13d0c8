use thiserror::Error;

/// Errors raised anywhere in the monitoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no baseline calibrated for job size {0}")]
    MissingBaseline(u32),

    #[error("locked artifact digest mismatch: {0}")]
    ArtifactDigest(String),

    #[error("artifact corrupted: {0}")]
    ArtifactCorrupt(String),

    #[error("artifact config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("degenerate particle set: all weights are zero")]
    DegenerateParticles,

    #[error("lifecycle violation: {0}")]
    Lifecycle(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
