//! File formats, caches, providers and orchestration around `riskfusion-core`.

pub mod asr;
pub mod cache;
pub mod config;
pub mod encoders;
pub mod error;
pub mod extract;
pub mod manifest;
pub mod provider;
pub mod store;
pub mod synth;

pub use error::{PipelineError, Result};
pub mod predictions;
pub mod provenance;
pub mod stages;
