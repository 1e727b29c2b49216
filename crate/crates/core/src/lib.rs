//! Algorithmic core of the `riskfusion` pipeline.
//!
//! Everything in this crate is a pure value transformation over in-memory
//! data: domain types, stratified splitting, prompt rendering, the mock
//! extraction and encoder plugins, the classification/fusion heads with their
//! Adam + cosine training loop, logit voting, and Acc/F1 reporting.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, caches, provider
//! registries and the CLI live in the `riskfusion` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod domain;
pub mod encoder;
pub mod fusion;
pub mod head;
pub mod metrics;
pub mod mock;
pub mod optim;
pub mod prompt;
pub mod rng;
pub mod split;
pub mod train;
pub mod vote;

pub use domain::{
    DatasetManifest, Language, RecordingRef, RiskLabel, Sex, Split, SubjectRecord, TaskKind, Transcript,
    ValidationReport, Violation,
};
pub use encoder::{
    BagOfAcousticTokens, BagOfMarkers, Encoder, EncoderDescriptor, EncoderError, EncoderInput, Modality, Pooling,
    Representation,
};
pub use fusion::{fuse, FusedInput, FusionConfig, FusionError, FusionModel};
pub use head::{ClassifierHeadConfig, HeadParams, HeadShape};
pub use metrics::{ConfusionCounts, MetricsError, MetricsResult, ReportRow, ReportTable};
pub use optim::{cosine_lr, Adam};
pub use prompt::{PromptError, PromptTemplate};
pub use train::{Hyperparams, Logits, TrainError, TrainedModel, TrainingHistory};
pub use vote::{FinalPrediction, TaskLogitsSet, VoteError, VotingPolicy};
