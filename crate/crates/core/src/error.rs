use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input outside domain: {0}")]
    InputDomain(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("no route from node {from} to node {to}")]
    NoRoute { from: usize, to: usize },
    #[error("pose ({x:.2}, {y:.2}) does not snap to any graph node within {radius} m")]
    NoSnap { x: f64, y: f64, radius: f64 },
    #[error("scenario capacity exceeded: could not place {kind} #{index}")]
    ScenarioCapacity { kind: &'static str, index: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape { what: String, expected: usize, got: usize },
    #[error("training diverged at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("missing artifacts: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifacts(Vec<PathBuf>),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the failure stems from configuration rather than execution.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidMap(_) | Error::MissingArtifacts(_) | Error::Shape { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
