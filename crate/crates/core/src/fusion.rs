//! Late fusion over frozen text and speech representations.
//!
//! The fused vector is the plain concatenation `[text ; speech]`. Only the
//! 256-unit fusion head is trained; encoders are never touched. PR has no
//! text branch, so its logits always come from the speech model.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{RiskLabel, TaskKind};
use crate::encoder::{Encoder, EncoderDescriptor, EncoderInput, Modality, Representation};
use crate::head::{HeadParams, HeadShape, DROPOUT, FUSION_HIDDEN};
use crate::train::{fit, to_f64, Hyperparams, Logits, Precomputed, TrainError, TrainedModel, TrainingHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub text_encoder_id: String,
    pub speech_encoder_id: String,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    crate::train::DEFAULT_EPOCHS
}

impl FusionConfig {
    pub fn new(text_encoder_id: impl Into<String>, speech_encoder_id: impl Into<String>) -> Self {
        Self {
            text_encoder_id: text_encoder_id.into(),
            speech_encoder_id: speech_encoder_id.into(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        FUSION_HIDDEN
    }

    pub fn shape(&self, input_dim: usize) -> HeadShape {
        HeadShape { input_dim, hidden_dim: FUSION_HIDDEN, dropout: DROPOUT }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let mut h = Hyperparams::new(self.learning_rate, self.batch_size).with_seed(self.seed);
        h.epochs = self.epochs;
        h
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("cannot fuse {text_subject}/{text_task} with {speech_subject}/{speech_task}")]
    KeyMismatch { text_subject: String, text_task: TaskKind, speech_subject: String, speech_task: TaskKind },
    #[error("non-finite value in representation of {0}")]
    NonFinite(String),
    #[error("encoder {got} does not match configured {expected}")]
    EncoderMismatch { expected: String, got: String },
    #[error("fused input has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("PR takes speech-only input; fused input rejected")]
    PassageReadingFused,
    #[error("speech-only prediction for PR requires a speech model, got {0}")]
    PassageReadingText(Modality),
    #[error("fusion model for {model} cannot score task {input}")]
    TaskMismatch { model: TaskKind, input: TaskKind },
    #[error("no fusion model available for {0}")]
    MissingModel(TaskKind),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// `[text ; speech]` for one (subject, task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedInput {
    pub subject_id: String,
    pub task: TaskKind,
    pub vector: Vec<f32>,
    pub text_dim: usize,
}

impl FusedInput {
    pub fn text_block(&self) -> &[f32] {
        &self.vector[..self.text_dim]
    }

    pub fn speech_block(&self) -> &[f32] {
        &self.vector[self.text_dim..]
    }
}

pub fn fuse(text: &Representation, speech: &Representation) -> Result<FusedInput, FusionError> {
    if text.subject_id != speech.subject_id || text.task != speech.task {
        return Err(FusionError::KeyMismatch {
            text_subject: text.subject_id.clone(),
            text_task: text.task,
            speech_subject: speech.subject_id.clone(),
            speech_task: speech.task,
        });
    }
    for r in [text, speech] {
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite(r.encoder_id.clone()));
        }
    }
    let mut vector = Vec::with_capacity(text.vector.len() + speech.vector.len());
    vector.extend_from_slice(&text.vector);
    vector.extend_from_slice(&speech.vector);
    Ok(FusedInput { subject_id: text.subject_id.clone(), task: text.task, vector, text_dim: text.vector.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub task: TaskKind,
    pub text_dim: usize,
    pub speech_dim: usize,
    pub head: HeadParams,
    pub history: TrainingHistory,
}

impl FusionModel {
    pub fn model_id(&self) -> String {
        alloc::format!("fusion:{}+{}:{}", self.config.text_encoder_id, self.config.speech_encoder_id, self.task)
    }

    fn check_input(&self, input: &FusedInput) -> Result<(), FusionError> {
        let expected = self.text_dim + self.speech_dim;
        if input.vector.len() != expected || input.text_dim != self.text_dim {
            return Err(FusionError::Dimension { expected, got: input.vector.len() });
        }
        Ok(())
    }
}

fn canonical(set: &[(FusedInput, RiskLabel)]) -> Vec<&(FusedInput, RiskLabel)> {
    let mut rows: Vec<_> = set.iter().collect();
    rows.sort_by(|a, b| a.0.subject_id.cmp(&b.0.subject_id));
    rows
}

/// Trains the fusion head for one of ER/ED on precomputed, frozen representations.
pub fn train_fusion(
    train: &[(FusedInput, RiskLabel)],
    dev: &[(FusedInput, RiskLabel)],
    text: &EncoderDescriptor,
    speech: &EncoderDescriptor,
    task: TaskKind,
    config: &FusionConfig,
) -> Result<FusionModel, FusionError> {
    if task == TaskKind::PR {
        return Err(FusionError::PassageReadingFused);
    }
    for (d, expected) in [(text, &config.text_encoder_id), (speech, &config.speech_encoder_id)] {
        if &d.encoder_id != expected {
            return Err(FusionError::EncoderMismatch { expected: expected.clone(), got: d.encoder_id.clone() });
        }
    }
    let input_dim = text.repr_dim + speech.repr_dim;
    for (x, _) in train.iter().chain(dev) {
        if x.vector.len() != input_dim || x.text_dim != text.repr_dim {
            return Err(FusionError::Dimension { expected: input_dim, got: x.vector.len() });
        }
        if x.task != task {
            return Err(FusionError::TaskMismatch { model: task, input: x.task });
        }
    }
    // Rows are put in subject order before the seeded shuffle, so the caller's
    // row order has no effect on the trained head.
    let (train, dev) = (canonical(train), canonical(dev));
    let labels = |set: &[&(FusedInput, RiskLabel)]| set.iter().map(|(_, l)| *l).collect::<Vec<_>>();
    let mut source = Precomputed {
        train: train.iter().map(|(x, _)| to_f64(&x.vector)).collect(),
        dev: dev.iter().map(|(x, _)| to_f64(&x.vector)).collect(),
    };
    let (head, history) =
        fit(&mut source, &labels(&train), &labels(&dev), config.shape(input_dim), &config.hyperparams())?;
    Ok(FusionModel {
        config: config.clone(),
        task,
        text_dim: text.repr_dim,
        speech_dim: speech.repr_dim,
        head,
        history,
    })
}

/// Input to [`fusion_predict`].
pub enum FusionInput<'a, E> {
    Fused(&'a FusedInput),
    /// A single fine-tuned model scores the subject on its own. Always the
    /// case for PR; for ER/ED it marks a fallback when one modality is missing.
    Unimodal {
        subject_id: &'a str,
        model: &'a TrainedModel<E>,
        input: &'a EncoderInput,
    },
}

pub fn fusion_predict<E: Encoder>(
    model: Option<&FusionModel>,
    input: FusionInput<'_, E>,
    task: TaskKind,
) -> Result<Logits, FusionError> {
    match input {
        FusionInput::Fused(_) if task == TaskKind::PR => Err(FusionError::PassageReadingFused),
        FusionInput::Fused(x) => {
            let model = model.ok_or(FusionError::MissingModel(task))?;
            if model.task != task || x.task != task {
                return Err(FusionError::TaskMismatch { model: model.task, input: x.task });
            }
            model.check_input(x)?;
            let values = model.head.forward(&to_f64(&x.vector)).map_err(TrainError::from)?;
            Ok(Logits { subject_id: x.subject_id.clone(), task, source_id: model.model_id(), values, fallback: false })
        }
        FusionInput::Unimodal { subject_id, model: single, input } => {
            let modality = single.encoder.descriptor().modality;
            if task == TaskKind::PR && modality != Modality::Speech {
                return Err(FusionError::PassageReadingText(modality));
            }
            if single.task != task {
                return Err(FusionError::TaskMismatch { model: single.task, input: task });
            }
            let mut logits = single.predict_logits(subject_id, input)?;
            logits.fallback = task != TaskKind::PR;
            Ok(logits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{AcousticFrames, BagOfAcousticTokens, Pooling};
    use crate::head::ClassifierHeadConfig;
    use crate::train::train_classifier;
    use alloc::vec;

    fn rep(subject: &str, task: TaskKind, enc: &str, v: Vec<f32>) -> Representation {
        Representation::new(subject, task, enc, v).unwrap()
    }

    fn descriptor(id: &str, modality: Modality, dim: usize) -> EncoderDescriptor {
        EncoderDescriptor {
            encoder_id: id.into(),
            modality,
            repr_dim: dim,
            trainable: false,
            pooling: Pooling::Summary,
            max_context: None,
            window_frames: None,
        }
    }

    #[test]
    fn concatenation_is_text_first_and_invertible() {
        let t = rep("S1", TaskKind::ER, "t", vec![1.0; 768]);
        let s = rep("S1", TaskKind::ER, "s", vec![2.0; 1024]);
        let f = fuse(&t, &s).unwrap();
        assert_eq!(f.vector.len(), 1792);
        assert_eq!(f.text_block(), &t.vector[..]);
        assert_eq!(f.speech_block(), &s.vector[..]);
        let z = fuse(&rep("S1", TaskKind::ER, "t", vec![0.0; 3]), &rep("S1", TaskKind::ER, "s", vec![0.0; 2])).unwrap();
        assert!(z.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_keys_are_rejected() {
        let t = rep("S1", TaskKind::ER, "t", vec![1.0]);
        assert!(matches!(fuse(&t, &rep("S2", TaskKind::ER, "s", vec![1.0])), Err(FusionError::KeyMismatch { .. })));
        assert!(matches!(fuse(&t, &rep("S1", TaskKind::ED, "s", vec![1.0])), Err(FusionError::KeyMismatch { .. })));
    }

    #[test]
    fn fusion_parameter_count() {
        let cfg = FusionConfig::new("t", "s");
        assert_eq!(cfg.shape(1792).param_count(), 459_522);
        assert_eq!((cfg.learning_rate, cfg.batch_size, cfg.epochs), (1e-3, 32, 10));
    }

    fn fused_set(n: usize) -> Vec<(FusedInput, RiskLabel)> {
        (0..n)
            .map(|i| {
                let pos = i % 2 == 0;
                let t = rep(&alloc::format!("S{i}"), TaskKind::ER, "t", vec![if pos { 3.0 } else { 0.0 }, 1.0]);
                let s = rep(&alloc::format!("S{i}"), TaskKind::ER, "s", vec![if pos { 0.4 } else { 0.1 }]);
                (fuse(&t, &s).unwrap(), if pos { RiskLabel::AtRisk } else { RiskLabel::NonRisk })
            })
            .collect()
    }

    #[test]
    fn row_order_does_not_change_the_model() {
        let (t, sp) = (descriptor("t", Modality::Text, 2), descriptor("s", Modality::Speech, 1));
        let cfg = FusionConfig { seed: 9, epochs: 3, ..FusionConfig::new("t", "s") };
        let train = fused_set(24);
        let mut reversed = train.clone();
        reversed.reverse();
        reversed.swap(3, 17);
        let a = train_fusion(&train, &fused_set(6), &t, &sp, TaskKind::ER, &cfg).unwrap();
        let b = train_fusion(&reversed, &fused_set(6), &t, &sp, TaskKind::ER, &cfg).unwrap();
        assert_eq!(a, b);

        let c = train_fusion(&train, &fused_set(6), &t, &sp, TaskKind::ER, &FusionConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.head, c.head);
        assert_eq!(train, fused_set(24));
    }

    #[test]
    fn trains_on_separable_representations() {
        let cfg = FusionConfig { seed: 4, ..FusionConfig::new("t", "s") };
        let m = train_fusion(
            &fused_set(40),
            &fused_set(10),
            &descriptor("t", Modality::Text, 2),
            &descriptor("s", Modality::Speech, 1),
            TaskKind::ER,
            &cfg,
        )
        .unwrap();
        assert_eq!(m.history.dev_accuracy.last(), Some(&Some(1.0)));
        let x = &fused_set(1)[0].0;
        let a = fusion_predict::<BagOfAcousticTokens>(Some(&m), FusionInput::Fused(x), TaskKind::ER).unwrap();
        let b = fusion_predict::<BagOfAcousticTokens>(Some(&m), FusionInput::Fused(x), TaskKind::ER).unwrap();
        assert_eq!(a, b);
        assert!(a.source_id.starts_with("fusion:"));
    }

    #[test]
    fn encoder_and_dimension_checks() {
        let cfg = FusionConfig::new("t", "s");
        let err = train_fusion(
            &fused_set(4),
            &[],
            &descriptor("other", Modality::Text, 2),
            &descriptor("s", Modality::Speech, 1),
            TaskKind::ER,
            &cfg,
        );
        assert!(matches!(err, Err(FusionError::EncoderMismatch { .. })));
        let err = train_fusion(
            &fused_set(4),
            &[],
            &descriptor("t", Modality::Text, 3),
            &descriptor("s", Modality::Speech, 1),
            TaskKind::ER,
            &cfg,
        );
        assert!(matches!(err, Err(FusionError::Dimension { .. })));
    }

    #[test]
    fn zero_head_and_pr_routing() {
        let mut m = train_fusion(
            &fused_set(4),
            &[],
            &descriptor("t", Modality::Text, 2),
            &descriptor("s", Modality::Speech, 1),
            TaskKind::ER,
            &FusionConfig::new("t", "s"),
        )
        .unwrap();
        m.head = HeadParams::zeros(m.head.shape());
        let x = &fused_set(1)[0].0;
        let l = fusion_predict::<BagOfAcousticTokens>(Some(&m), FusionInput::Fused(x), TaskKind::ER).unwrap();
        assert_eq!(l.values, [0.0, 0.0]);

        let pr = FusedInput { task: TaskKind::PR, ..x.clone() };
        assert_eq!(
            fusion_predict::<BagOfAcousticTokens>(Some(&m), FusionInput::Fused(&pr), TaskKind::PR),
            Err(FusionError::PassageReadingFused)
        );

        let frames = |t: u32| EncoderInput::Speech(AcousticFrames { tokens: vec![t, t, 1] });
        let train = vec![(frames(0), RiskLabel::AtRisk), (frames(2), RiskLabel::NonRisk)];
        let speech = train_classifier(
            &train,
            &[],
            BagOfAcousticTokens::new("xlsr-mock", 3, false).unwrap(),
            TaskKind::PR,
            ClassifierHeadConfig { input_dim: 3 },
            &Hyperparams::speech_default(),
        )
        .unwrap();
        let input = frames(0);
        let l = fusion_predict(
            None,
            FusionInput::Unimodal { subject_id: "S9", model: &speech, input: &input },
            TaskKind::PR,
        )
        .unwrap();
        assert_eq!(l.source_id, speech.model_id());
        assert!(!l.fallback);
    }
}
