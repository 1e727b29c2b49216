//! Fine-tuning loop shared by the encoder heads and the fusion layer.
//!
//! Mini-batch cross-entropy with Adam, learning rate following
//! [`cosine_lr`](crate::optim::cosine_lr) over the total number of optimizer
//! steps. Final-epoch parameters are kept; dev accuracy is logged per epoch.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{RiskLabel, TaskKind};
use crate::encoder::{Encoder, EncoderError, EncoderInput, Modality};
use crate::head::{ClassifierHeadConfig, DimensionMismatch, HeadParams, HeadShape};
use crate::optim::{cosine_lr, Adam};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub seed: u64,
}

pub const DEFAULT_EPOCHS: usize = 10;

impl Hyperparams {
    pub fn text_default() -> Self {
        Self::new(5e-5, 16)
    }

    pub fn speech_default() -> Self {
        Self::new(1e-5, 8)
    }

    pub fn new(learning_rate: f64, batch_size: usize) -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            learning_rate,
            batch_size,
            optimizer: Optimizer::Adam,
            schedule: Schedule::Cosine,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidHyperparams(format!(
                "epochs={}, batch_size={}, learning_rate={}",
                self.epochs, self.batch_size, self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epoch_loss: Vec<f64>,
    /// `None` when no dev examples were supplied.
    pub dev_accuracy: Vec<Option<f64>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("training set contains only {0:?} examples")]
    SingleClass(RiskLabel),
    #[error("no text model is trained for PR: its transcript is identical for every subject")]
    PassageReadingText,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

/// Two-class scores for one (subject, task). Index 0 is NonRisk, 1 is AtRisk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub subject_id: String,
    pub task: TaskKind,
    pub source_id: String,
    pub values: [f64; 2],
    /// Set when a single-modality model stood in for a missing fusion input.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub fallback: bool,
}

/// A fine-tuned encoder + head for one task.
#[derive(Debug, Clone)]
pub struct TrainedModel<E> {
    pub encoder: E,
    pub task: TaskKind,
    pub head: HeadParams,
    pub hyperparams: Hyperparams,
    pub history: TrainingHistory,
}

impl<E: Encoder> TrainedModel<E> {
    pub fn model_id(&self) -> String {
        format!("{}:{}", self.encoder.descriptor().encoder_id, self.task)
    }

    /// Eval-mode logits for one input.
    pub fn logits(&self, input: &EncoderInput) -> Result<[f64; 2], TrainError> {
        let x = to_f64(&self.encoder.encode(input)?);
        Ok(self.head.forward(&x)?)
    }

    pub fn predict_logits(&self, subject_id: &str, input: &EncoderInput) -> Result<Logits, TrainError> {
        Ok(Logits {
            subject_id: subject_id.into(),
            task: self.task,
            source_id: self.model_id(),
            values: self.logits(input)?,
            fallback: false,
        })
    }
}

pub(crate) fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub(crate) fn check_labels(labels: &[RiskLabel]) -> Result<(), TrainError> {
    let first = *labels.first().ok_or(TrainError::EmptyTrainSet)?;
    if labels.iter().all(|&l| l == first) {
        return Err(TrainError::SingleClass(first));
    }
    Ok(())
}

/// Where training features come from.
pub(crate) trait FeatureSource {
    fn train_features(&self, i: usize) -> Result<Vec<f64>, TrainError>;
    fn dev_features(&self, i: usize) -> Result<Vec<f64>, TrainError>;
    /// Number of trainable parameters upstream of the head.
    fn param_len(&self) -> usize {
        0
    }
    fn accumulate(&self, _i: usize, _grad_x: &[f64], _grad: &mut [f64]) -> Result<(), TrainError> {
        Ok(())
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }
}

pub(crate) struct Precomputed {
    pub train: Vec<Vec<f64>>,
    pub dev: Vec<Vec<f64>>,
}

impl FeatureSource for Precomputed {
    fn train_features(&self, i: usize) -> Result<Vec<f64>, TrainError> {
        Ok(self.train[i].clone())
    }
    fn dev_features(&self, i: usize) -> Result<Vec<f64>, TrainError> {
        Ok(self.dev[i].clone())
    }
}

struct LiveEncoder<'a, E> {
    encoder: E,
    train: &'a [EncoderInput],
    dev: &'a [EncoderInput],
}

impl<E: Encoder> FeatureSource for LiveEncoder<'_, E> {
    fn train_features(&self, i: usize) -> Result<Vec<f64>, TrainError> {
        Ok(to_f64(&self.encoder.encode(&self.train[i])?))
    }
    fn dev_features(&self, i: usize) -> Result<Vec<f64>, TrainError> {
        Ok(to_f64(&self.encoder.encode(&self.dev[i])?))
    }
    fn param_len(&self) -> usize {
        self.encoder.parameters().len()
    }
    fn accumulate(&self, i: usize, grad_x: &[f64], grad: &mut [f64]) -> Result<(), TrainError> {
        Ok(self.encoder.accumulate_gradient(&self.train[i], grad_x, grad)?)
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.encoder.parameters_mut()
    }
}

/// Runs the optimisation loop and returns the final-epoch head.
pub(crate) fn fit<S: FeatureSource>(
    source: &mut S,
    train_labels: &[RiskLabel],
    dev_labels: &[RiskLabel],
    shape: HeadShape,
    hyper: &Hyperparams,
) -> Result<(HeadParams, TrainingHistory), TrainError> {
    hyper.validate()?;
    check_labels(train_labels)?;
    let n = train_labels.len();
    let mut head = HeadParams::init(shape, &mut stream(hyper.seed, Stream::Init));
    let mut shuffle_rng = stream(hyper.seed, Stream::Shuffle);
    let mut dropout_rng = stream(hyper.seed, Stream::Dropout);
    let mut head_opt = Adam::new(head.param_count());
    let upstream_len = source.param_len();
    let mut upstream_opt = Adam::new(upstream_len);

    let batches_per_epoch = n.div_ceil(hyper.batch_size);
    let total_steps = hyper.epochs * batches_per_epoch;
    let mut step = 0usize;
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(hyper.batch_size).enumerate() {
            let mut grad = vec![0.0; head.param_count()];
            let mut upstream_grad = vec![0.0; upstream_len];
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = source.train_features(i)?;
                let mask = head.dropout_mask(&mut dropout_rng);
                let g = head.loss_gradient(&x, train_labels[i], Some(&mask))?;
                batch_loss += g.loss;
                for (a, b) in grad.iter_mut().zip(&g.params) {
                    *a += b;
                }
                if upstream_len > 0 {
                    source.accumulate(i, &g.input, &mut upstream_grad)?;
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let lr = cosine_lr(step, total_steps, hyper.learning_rate).expect("step stays within the schedule");
            head_opt.step(head.values_mut(), &grad, lr);
            if upstream_len > 0 {
                upstream_grad.iter_mut().for_each(|g| *g *= scale);
                upstream_opt.step(source.params_mut(), &upstream_grad, lr);
            }
            step += 1;
        }
        history.epoch_loss.push(epoch_loss / n as f64);
        history.dev_accuracy.push(if dev_labels.is_empty() {
            None
        } else {
            let mut correct = 0usize;
            for (i, &label) in dev_labels.iter().enumerate() {
                let logits = head.forward(&source.dev_features(i)?)?;
                if argmax(logits) == label {
                    correct += 1;
                }
            }
            Some(correct as f64 / dev_labels.len() as f64)
        });
    }
    Ok((head, history))
}

/// Index of the larger logit; an exact tie goes to AtRisk.
pub fn argmax(values: [f64; 2]) -> RiskLabel {
    if values[1] >= values[0] {
        RiskLabel::AtRisk
    } else {
        RiskLabel::NonRisk
    }
}

/// Fine-tunes `encoder` plus a fresh classification head on one task.
///
/// Encoder parameters are updated only when its descriptor is trainable.
pub fn train_classifier<E: Encoder>(
    train: &[(EncoderInput, RiskLabel)],
    dev: &[(EncoderInput, RiskLabel)],
    mut encoder: E,
    task: TaskKind,
    head: ClassifierHeadConfig,
    hyper: &Hyperparams,
) -> Result<TrainedModel<E>, TrainError> {
    let descriptor = encoder.descriptor().clone();
    if descriptor.modality == Modality::Text && task == TaskKind::PR {
        return Err(TrainError::PassageReadingText);
    }
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if head.input_dim != descriptor.repr_dim {
        return Err(DimensionMismatch { expected: head.input_dim, got: descriptor.repr_dim }.into());
    }
    for (input, _) in train.iter().chain(dev) {
        encoder.check_modality(input)?;
    }
    hyper.validate()?;
    let train_labels: Vec<RiskLabel> = train.iter().map(|(_, l)| *l).collect();
    check_labels(&train_labels)?;
    let dev_labels: Vec<RiskLabel> = dev.iter().map(|(_, l)| *l).collect();

    let head_params;
    let history;
    if descriptor.trainable && !encoder.parameters().is_empty() {
        let train_inputs: Vec<EncoderInput> = train.iter().map(|(x, _)| x.clone()).collect();
        let dev_inputs: Vec<EncoderInput> = dev.iter().map(|(x, _)| x.clone()).collect();
        let mut live = LiveEncoder { encoder: &mut encoder, train: &train_inputs, dev: &dev_inputs };
        (head_params, history) = fit(&mut live, &train_labels, &dev_labels, head.shape(), hyper)?;
    } else {
        let encode_all = |set: &[(EncoderInput, RiskLabel)]| -> Result<Vec<Vec<f64>>, TrainError> {
            set.iter().map(|(x, _)| Ok(to_f64(&encoder.encode(x)?))).collect()
        };
        let mut pre = Precomputed { train: encode_all(train)?, dev: encode_all(dev)? };
        (head_params, history) = fit(&mut pre, &train_labels, &dev_labels, head.shape(), hyper)?;
    }
    Ok(TrainedModel { encoder, task, head: head_params, hyperparams: hyper.clone(), history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{AcousticFrames, BagOfMarkers};
    use alloc::string::ToString;

    fn encoder(trainable: bool) -> BagOfMarkers {
        let slots = ["a", "b"].iter().map(|s| vec![s.to_string()]).collect();
        BagOfMarkers::new("bom", 4, slots, trainable).unwrap()
    }

    fn data(n: usize) -> Vec<(EncoderInput, RiskLabel)> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    (EncoderInput::Text("a a a b".into()), RiskLabel::AtRisk)
                } else {
                    (EncoderInput::Text("b b b a".into()), RiskLabel::NonRisk)
                }
            })
            .collect()
    }

    fn head() -> ClassifierHeadConfig {
        ClassifierHeadConfig { input_dim: 4 }
    }

    #[test]
    fn defaults() {
        let t = Hyperparams::text_default();
        assert_eq!((t.epochs, t.learning_rate, t.batch_size), (10, 5e-5, 16));
        let s = Hyperparams::speech_default();
        assert_eq!((s.epochs, s.learning_rate, s.batch_size), (10, 1e-5, 8));
    }

    #[test]
    fn learns_a_separable_task_and_records_history() {
        let hyper = Hyperparams::new(1e-2, 4).with_seed(5);
        let m = train_classifier(&data(20), &data(6), encoder(false), TaskKind::ER, head(), &hyper).unwrap();
        assert_eq!(m.history.epoch_loss.len(), 10);
        assert_eq!(m.history.dev_accuracy.last(), Some(&Some(1.0)));
        assert_eq!(m.hyperparams, hyper);
    }

    #[test]
    fn pr_text_is_rejected() {
        let err = train_classifier(&data(4), &[], encoder(false), TaskKind::PR, head(), &Hyperparams::text_default());
        assert_eq!(err.unwrap_err(), TrainError::PassageReadingText);
    }

    #[test]
    fn single_class_is_rejected() {
        let train: Vec<_> = data(6).into_iter().filter(|(_, l)| *l == RiskLabel::AtRisk).collect();
        let err = train_classifier(&train, &[], encoder(false), TaskKind::ER, head(), &Hyperparams::text_default());
        assert_eq!(err.unwrap_err(), TrainError::SingleClass(RiskLabel::AtRisk));
    }

    #[test]
    fn modality_mismatch_is_rejected() {
        let mut train = data(4);
        train.push((EncoderInput::Speech(AcousticFrames { tokens: alloc::vec![0] }), RiskLabel::AtRisk));
        let err = train_classifier(&train, &[], encoder(false), TaskKind::ER, head(), &Hyperparams::text_default());
        assert!(matches!(err, Err(TrainError::Encoder(EncoderError::ModalityMismatch { .. }))));
    }

    #[test]
    fn frozen_encoder_is_untouched_and_trainable_one_moves() {
        let hyper = Hyperparams::new(1e-2, 4).with_seed(1);
        let frozen = train_classifier(&data(8), &[], encoder(false), TaskKind::ER, head(), &hyper).unwrap();
        assert!(frozen.encoder.parameters().is_empty());
        let tuned = train_classifier(&data(8), &[], encoder(true), TaskKind::ER, head(), &hyper).unwrap();
        assert_ne!(tuned.encoder.parameters(), encoder(true).parameters());
        // Slots past the lexicon never see a non-zero input, so their scale stays put.
        assert_eq!(&tuned.encoder.parameters()[2..], &[1.0, 1.0]);
    }

    #[test]
    fn same_seed_same_history() {
        let hyper = Hyperparams::new(1e-3, 3).with_seed(9);
        let a = train_classifier(&data(10), &data(4), encoder(true), TaskKind::ED, head(), &hyper).unwrap();
        let b = train_classifier(&data(10), &data(4), encoder(true), TaskKind::ED, head(), &hyper).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.head, b.head);
    }

    #[test]
    fn zero_head_predicts_zero() {
        let hyper = Hyperparams::text_default();
        let mut m = train_classifier(&data(4), &[], encoder(false), TaskKind::ER, head(), &hyper).unwrap();
        m.head = HeadParams::zeros(head().shape());
        let l = m.predict_logits("S1", &EncoderInput::Text("a b".into())).unwrap();
        assert_eq!(l.values, [0.0, 0.0]);
        assert_eq!(l.source_id, "bom:ER");
    }

    #[test]
    fn non_finite_input_aborts() {
        let hyper = Hyperparams::new(1e-2, 2);
        let mut pre =
            Precomputed { train: alloc::vec![alloc::vec![f64::INFINITY, 0.0], alloc::vec![0.0, 1.0]], dev: Vec::new() };
        let shape = HeadShape { input_dim: 2, hidden_dim: 4, dropout: 0.0 };
        let err = fit(&mut pre, &[RiskLabel::AtRisk, RiskLabel::NonRisk], &[], shape, &hyper);
        assert!(matches!(err, Err(TrainError::NonFiniteLoss { epoch: 0, batch: 0 })));
    }
}
