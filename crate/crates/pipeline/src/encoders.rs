//! Encoder plugins selectable from configuration.

use std::path::Path;

use riskfusion_core::encoder::{AcousticFrames, BagOfAcousticTokens, BagOfMarkers, EncoderDescriptor};
use riskfusion_core::mock::MarkerLexicon;
use riskfusion_core::{Encoder, EncoderError, EncoderInput};
use serde::{Deserialize, Serialize};

/// Encoder selection as written in the experiment config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    BagOfMarkers {
        id: String,
        dim: usize,
        #[serde(default = "yes")]
        trainable: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_context: Option<usize>,
    },
    BagOfAcousticTokens {
        id: String,
        vocab: usize,
        #[serde(default = "yes")]
        trainable: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window_frames: Option<usize>,
    },
    /// A pretrained checkpoint served by an external backend. Not bundled.
    External { id: String, modality: String, dim: usize },
}

fn yes() -> bool {
    true
}

impl EncoderSpec {
    pub fn id(&self) -> &str {
        match self {
            EncoderSpec::BagOfMarkers { id, .. }
            | EncoderSpec::BagOfAcousticTokens { id, .. }
            | EncoderSpec::External { id, .. } => id,
        }
    }

    /// Instantiates the encoder. Marker encoders take their slots from `lexicon`.
    pub fn build(&self, lexicon: Option<&MarkerLexicon>) -> Result<AnyEncoder, EncoderError> {
        match self {
            EncoderSpec::BagOfMarkers { id, dim, trainable, max_context } => {
                let lexicon = lexicon
                    .ok_or_else(|| EncoderError::Unavailable(format!("{id}: bag_of_markers needs a marker lexicon")))?;
                let mut e = BagOfMarkers::new(id.clone(), *dim, lexicon.slots(), *trainable)?;
                if let Some(n) = max_context {
                    e = e.with_max_context(*n);
                }
                Ok(AnyEncoder::Markers(e))
            }
            EncoderSpec::BagOfAcousticTokens { id, vocab, trainable, window_frames } => {
                let mut e = BagOfAcousticTokens::new(id.clone(), *vocab, *trainable)?;
                if let Some(w) = window_frames {
                    e = e.with_window_frames(*w);
                }
                Ok(AnyEncoder::Tokens(e))
            }
            EncoderSpec::External { id, .. } => {
                Err(EncoderError::Unavailable(format!("no backend for external encoder `{id}`")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyEncoder {
    Markers(BagOfMarkers),
    Tokens(BagOfAcousticTokens),
}

impl AnyEncoder {
    fn inner(&self) -> &dyn Encoder {
        match self {
            AnyEncoder::Markers(e) => e,
            AnyEncoder::Tokens(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Encoder {
        match self {
            AnyEncoder::Markers(e) => e,
            AnyEncoder::Tokens(e) => e,
        }
    }
}

impl Encoder for AnyEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        self.inner().descriptor()
    }

    fn encode(&self, input: &EncoderInput) -> Result<Vec<f32>, EncoderError> {
        self.inner().encode(input)
    }

    fn parameters(&self) -> &[f64] {
        self.inner().parameters()
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        self.inner_mut().parameters_mut()
    }

    fn accumulate_gradient(
        &self,
        input: &EncoderInput,
        grad_output: &[f64],
        grad: &mut [f64],
    ) -> Result<(), EncoderError> {
        self.inner().accumulate_gradient(input, grad_output, grad)
    }
}

/// Parses a surrogate audio file: whitespace-separated frame token ids.
pub fn parse_tokens(text: &str) -> Result<AcousticFrames, EncoderError> {
    let tokens = text
        .split_whitespace()
        .map(|t| t.parse::<u32>().map_err(|_| EncoderError::InvalidInput(format!("bad frame token {t:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AcousticFrames { tokens })
}

pub fn read_audio(path: &Path) -> Result<EncoderInput, EncoderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EncoderError::Unavailable(format!("cannot read audio {}: {e}", path.display())))?;
    Ok(EncoderInput::Speech(parse_tokens(&text)?))
}
