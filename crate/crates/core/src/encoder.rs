//! Encoder plugin contract and the two mock encoders.
//!
//! Real pretrained checkpoints plug in by implementing [`Encoder`]. The mocks
//! make the whole pipeline runnable without any checkpoint: a bag-of-markers
//! text encoder and a bag-of-acoustic-tokens speech encoder over surrogate
//! frame sequences.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TaskKind;
use crate::mock::count_occurrences;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Speech,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Speech => "speech",
        })
    }
}

/// How token- or frame-level states become one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// The encoder's designated summary vector.
    Summary,
    MeanPositions,
    MeanFrames,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub encoder_id: String,
    pub modality: Modality,
    pub repr_dim: usize,
    pub trainable: bool,
    pub pooling: Pooling,
    /// Text inputs are truncated to this many characters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_context: Option<usize>,
    /// Audio is pooled per window of this many frames, then across windows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_frames: Option<usize>,
}

/// Surrogate frame tokens standing in for decoded audio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcousticFrames {
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderInput {
    Text(String),
    Speech(AcousticFrames),
}

impl EncoderInput {
    pub fn modality(&self) -> Modality {
        match self {
            EncoderInput::Text(_) => Modality::Text,
            EncoderInput::Speech(_) => Modality::Speech,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncoderError {
    #[error("encoder {encoder_id} expects {expected} input, got {got}")]
    ModalityMismatch { encoder_id: String, expected: Modality, got: Modality },
    #[error("encoder backend unavailable: {0}")]
    Unavailable(String),
    #[error("invalid encoder input: {0}")]
    InvalidInput(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParameterLength { expected: usize, got: usize },
}

pub trait Encoder {
    fn descriptor(&self) -> &EncoderDescriptor;

    fn encode(&self, input: &EncoderInput) -> Result<Vec<f32>, EncoderError>;

    /// Fine-tunable parameters, flattened. Empty when the encoder has none.
    fn parameters(&self) -> &[f64] {
        &[]
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    /// Adds d(loss)/d(parameters) to `grad` given d(loss)/d(output).
    fn accumulate_gradient(
        &self,
        _input: &EncoderInput,
        _grad_output: &[f64],
        _grad: &mut [f64],
    ) -> Result<(), EncoderError> {
        Ok(())
    }

    fn check_modality(&self, input: &EncoderInput) -> Result<(), EncoderError> {
        let d = self.descriptor();
        if input.modality() != d.modality {
            return Err(EncoderError::ModalityMismatch {
                encoder_id: d.encoder_id.clone(),
                expected: d.modality,
                got: input.modality(),
            });
        }
        Ok(())
    }

    fn load_parameters(&mut self, params: &[f64]) -> Result<(), EncoderError> {
        let dst = self.parameters_mut();
        if dst.len() != params.len() {
            return Err(EncoderError::ParameterLength { expected: dst.len(), got: params.len() });
        }
        dst.copy_from_slice(params);
        Ok(())
    }
}

impl<E: Encoder + ?Sized> Encoder for &mut E {
    fn descriptor(&self) -> &EncoderDescriptor {
        (**self).descriptor()
    }
    fn encode(&self, input: &EncoderInput) -> Result<Vec<f32>, EncoderError> {
        (**self).encode(input)
    }
    fn parameters(&self) -> &[f64] {
        (**self).parameters()
    }
    fn parameters_mut(&mut self) -> &mut [f64] {
        (**self).parameters_mut()
    }
    fn accumulate_gradient(
        &self,
        input: &EncoderInput,
        grad_output: &[f64],
        grad: &mut [f64],
    ) -> Result<(), EncoderError> {
        (**self).accumulate_gradient(input, grad_output, grad)
    }
}

/// A fixed-length vector produced by an encoder for one (subject, task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub subject_id: String,
    pub task: TaskKind,
    pub encoder_id: String,
    pub vector: Vec<f32>,
}

impl Representation {
    pub fn new(
        subject_id: impl Into<String>,
        task: TaskKind,
        encoder_id: impl Into<String>,
        vector: Vec<f32>,
    ) -> Result<Self, EncoderError> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::InvalidInput("non-finite representation".into()));
        }
        Ok(Self { subject_id: subject_id.into(), task, encoder_id: encoder_id.into(), vector })
    }
}

/// Text encoder whose output counts marker occurrences per lexicon slot.
///
/// Slot `i` may list several surface forms (for example a Chinese marker and
/// its English rendering); all of them count towards index `i`. Indices past
/// the last slot stay zero. When trainable, each index carries a learnable
/// scale, initialised to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfMarkers {
    descriptor: EncoderDescriptor,
    slots: Vec<Vec<String>>,
    scale: Vec<f64>,
}

impl BagOfMarkers {
    pub fn new(
        encoder_id: impl Into<String>,
        repr_dim: usize,
        slots: Vec<Vec<String>>,
        trainable: bool,
    ) -> Result<Self, EncoderError> {
        if repr_dim == 0 || slots.len() > repr_dim {
            return Err(EncoderError::InvalidInput(alloc::format!(
                "{} marker slots do not fit in dimension {repr_dim}",
                slots.len()
            )));
        }
        Ok(Self {
            descriptor: EncoderDescriptor {
                encoder_id: encoder_id.into(),
                modality: Modality::Text,
                repr_dim,
                trainable,
                pooling: Pooling::Summary,
                max_context: None,
                window_frames: None,
            },
            slots,
            scale: if trainable { vec![1.0; repr_dim] } else { Vec::new() },
        })
    }

    pub fn with_max_context(mut self, chars: usize) -> Self {
        self.descriptor.max_context = Some(chars);
        self
    }

    fn counts(&self, input: &EncoderInput) -> Result<Vec<f64>, EncoderError> {
        self.check_modality(input)?;
        let EncoderInput::Text(text) = input else { unreachable!() };
        let text = match self.descriptor.max_context {
            Some(n) => match text.char_indices().nth(n) {
                Some((cut, _)) => &text[..cut],
                None => text.as_str(),
            },
            None => text.as_str(),
        };
        let mut out = vec![0.0; self.descriptor.repr_dim];
        for (slot, forms) in self.slots.iter().enumerate() {
            out[slot] = forms.iter().map(|f| count_occurrences(text, f)).sum::<usize>() as f64;
        }
        Ok(out)
    }
}

impl Encoder for BagOfMarkers {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn encode(&self, input: &EncoderInput) -> Result<Vec<f32>, EncoderError> {
        let counts = self.counts(input)?;
        Ok(scaled(&counts, &self.scale))
    }

    fn parameters(&self) -> &[f64] {
        &self.scale
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.scale
    }

    fn accumulate_gradient(
        &self,
        input: &EncoderInput,
        grad_output: &[f64],
        grad: &mut [f64],
    ) -> Result<(), EncoderError> {
        if !self.scale.is_empty() {
            let counts = self.counts(input)?;
            for ((g, c), go) in grad.iter_mut().zip(&counts).zip(grad_output) {
                *g += go * c;
            }
        }
        Ok(())
    }
}

pub const DEFAULT_FRAME_RATE_HZ: usize = 50;
/// 30 s windows at the surrogate frame rate.
pub const DEFAULT_WINDOW_FRAMES: usize = 30 * DEFAULT_FRAME_RATE_HZ;

/// Speech encoder over surrogate acoustic tokens.
///
/// Each frame is one-hot over `repr_dim` token ids; frames are mean-pooled per
/// window and windows are mean-pooled into the final vector, so the output is
/// the (window-averaged) token frequency histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfAcousticTokens {
    descriptor: EncoderDescriptor,
    scale: Vec<f64>,
}

impl BagOfAcousticTokens {
    pub fn new(encoder_id: impl Into<String>, vocab: usize, trainable: bool) -> Result<Self, EncoderError> {
        if vocab == 0 {
            return Err(EncoderError::InvalidInput("empty token vocabulary".into()));
        }
        Ok(Self {
            descriptor: EncoderDescriptor {
                encoder_id: encoder_id.into(),
                modality: Modality::Speech,
                repr_dim: vocab,
                trainable,
                pooling: Pooling::MeanFrames,
                max_context: None,
                window_frames: Some(DEFAULT_WINDOW_FRAMES),
            },
            scale: if trainable { vec![1.0; vocab] } else { Vec::new() },
        })
    }

    pub fn with_window_frames(mut self, frames: usize) -> Self {
        self.descriptor.window_frames = Some(frames.max(1));
        self
    }

    fn pooled(&self, input: &EncoderInput) -> Result<Vec<f64>, EncoderError> {
        self.check_modality(input)?;
        let EncoderInput::Speech(frames) = input else { unreachable!() };
        let dim = self.descriptor.repr_dim;
        if frames.tokens.is_empty() {
            return Err(EncoderError::InvalidInput("no acoustic frames".into()));
        }
        if let Some(&bad) = frames.tokens.iter().find(|&&t| t as usize >= dim) {
            return Err(EncoderError::InvalidInput(alloc::format!("token {bad} outside vocabulary of {dim}")));
        }
        let window = self.descriptor.window_frames.unwrap_or(frames.tokens.len()).max(1);
        let mut out = vec![0.0; dim];
        let mut windows = 0usize;
        for chunk in frames.tokens.chunks(window) {
            let mut hist = vec![0usize; dim];
            for &t in chunk {
                hist[t as usize] += 1;
            }
            for (o, h) in out.iter_mut().zip(hist) {
                *o += h as f64 / chunk.len() as f64;
            }
            windows += 1;
        }
        for o in &mut out {
            *o /= windows as f64;
        }
        Ok(out)
    }
}

impl Encoder for BagOfAcousticTokens {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn encode(&self, input: &EncoderInput) -> Result<Vec<f32>, EncoderError> {
        let pooled = self.pooled(input)?;
        Ok(scaled(&pooled, &self.scale))
    }

    fn parameters(&self) -> &[f64] {
        &self.scale
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.scale
    }

    fn accumulate_gradient(
        &self,
        input: &EncoderInput,
        grad_output: &[f64],
        grad: &mut [f64],
    ) -> Result<(), EncoderError> {
        if !self.scale.is_empty() {
            let pooled = self.pooled(input)?;
            for ((g, p), go) in grad.iter_mut().zip(&pooled).zip(grad_output) {
                *g += go * p;
            }
        }
        Ok(())
    }
}

fn scaled(values: &[f64], scale: &[f64]) -> Vec<f32> {
    if scale.is_empty() {
        values.iter().map(|&v| v as f32).collect()
    } else {
        values.iter().zip(scale).map(|(&v, &s)| (v * s) as f32).collect()
    }
}
