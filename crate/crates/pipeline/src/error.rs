use std::io;
use std::path::PathBuf;

use riskfusion_core::fusion::FusionError;
use riskfusion_core::metrics::MetricsError;
use riskfusion_core::split::SplitError;
use riskfusion_core::train::TrainError;
use riskfusion_core::vote::VoteError;
use riskfusion_core::EncoderError;
use thiserror::Error;

use crate::asr::AsrError;
use crate::extract::ExtractError;
use crate::manifest::ManifestError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Validation(String),
    #[error("missing upstream artifact {}: run `{stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("config hash {current} differs from {existing} used for existing outputs in {}; use a new experiment_id", dir.display())]
    ConfigMismatch { dir: PathBuf, existing: String, current: String },
    #[error("representation file {} changed during fusion training", .0.display())]
    FrozenViolation(PathBuf),
    #[error("malformed artifact {}: {reason}", path.display())]
    Artifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Asr(#[from] AsrError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> PipelineError {
        let context = context.into();
        move |source| PipelineError::Io { context, source }
    }

    /// Process exit code: 2 for missing upstream artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingArtifact { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
