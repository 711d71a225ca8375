use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("object placement infeasible after {attempts} attempts")]
    PlacementInfeasible { attempts: usize },
    #[error("scripted demonstration failed on task {task}: {reason}")]
    DemonstrationFailed { task: String, reason: String },
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("target out of workspace: {0}")]
    TargetOutOfWorkspace(String),
    #[error("replan limit of {limit} exceeded")]
    ReplanLimitExceeded { limit: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported format version {found} in {path} (supported up to {supported})")]
    UnsupportedVersion { path: PathBuf, found: u32, supported: u32 },
    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed binary sidecar {}: {reason}", path.display())]
    Sidecar { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable kind used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PlacementInfeasible { .. } => "placement_infeasible",
            Error::DemonstrationFailed { .. } => "demonstration_failed",
            Error::BudgetExhausted(_) => "budget_exhausted",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::TargetOutOfWorkspace(_) => "target_out_of_workspace",
            Error::ReplanLimitExceeded { .. } => "replan_limit_exceeded",
            Error::InvalidTask(_) => "invalid_task",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::InvalidConfig(_) => "invalid_config",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::ProvenanceMismatch(_) => "provenance_mismatch",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Sidecar { .. } => "sidecar",
        }
    }
}
