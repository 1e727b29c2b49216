//! One-hidden-layer classification head: `W2 · dropout(ReLU(W1·x + b1)) + b2`.
//!
//! Used both on top of a single encoder (512 hidden units) and as the
//! multimodal fusion layer (256 hidden units). Parameters live in one flat
//! vector laid out as `[W1 (hidden × input, row-major), b1, W2 (2 × hidden), b2]`
//! so optimizer state and persistence are plain slices.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RiskLabel;

pub const NUM_CLASSES: usize = 2;
pub const CLASSIFIER_HIDDEN: usize = 512;
pub const FUSION_HIDDEN: usize = 256;
pub const DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl HeadShape {
    pub fn param_count(&self) -> usize {
        (self.input_dim * self.hidden_dim + self.hidden_dim) + (self.hidden_dim * NUM_CLASSES + NUM_CLASSES)
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = self.input_dim * self.hidden_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + NUM_CLASSES * self.hidden_dim;
        [w1, b1, w2, b2]
    }
}

/// Encoder classification head: 512 hidden units, ReLU, dropout 0.1, 2 classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierHeadConfig {
    pub input_dim: usize,
}

impl ClassifierHeadConfig {
    pub fn shape(&self) -> HeadShape {
        HeadShape { input_dim: self.input_dim, hidden_dim: CLASSIFIER_HIDDEN, dropout: DROPOUT }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("head expects input of length {expected}, got {got}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Intermediate values of one forward pass, kept for backprop.
struct Activations {
    pre: Vec<f64>,
    act: Vec<f64>,
    logits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    shape: HeadShape,
    values: Vec<f64>,
}

/// Loss, parameter gradient, and input gradient for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub loss: f64,
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(shape: HeadShape) -> Self {
        Self { shape, values: vec![0.0; shape.param_count()] }
    }

    /// Uniform init in ±1/sqrt(fan_in) for every weight and bias.
    pub fn init<R: Rng + ?Sized>(shape: HeadShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let [_, _, w2, _] = shape.offsets();
        let bound1 = 1.0 / libm::sqrt(shape.input_dim.max(1) as f64);
        let bound2 = 1.0 / libm::sqrt(shape.hidden_dim.max(1) as f64);
        for (i, v) in p.values.iter_mut().enumerate() {
            let bound = if i < w2 { bound1 } else { bound2 };
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn from_values(shape: HeadShape, values: Vec<f64>) -> Option<Self> {
        (values.len() == shape.param_count()).then_some(Self { shape, values })
    }

    pub fn shape(&self) -> HeadShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Per-unit dropout multipliers: 0 with probability p, else 1/(1-p).
    pub fn dropout_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.shape.dropout;
        let keep = 1.0 / (1.0 - p);
        (0..self.shape.hidden_dim).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
    }

    fn activations(&self, x: &[f64], mask: Option<&[f64]>) -> Activations {
        let HeadShape { input_dim, hidden_dim, .. } = self.shape;
        let [w1, b1, w2, b2] = self.shape.offsets();
        let v = &self.values;
        let mut pre = vec![0.0; hidden_dim];
        let mut act = vec![0.0; hidden_dim];
        for j in 0..hidden_dim {
            let row = &v[w1 + j * input_dim..w1 + (j + 1) * input_dim];
            let z = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + v[b1 + j];
            pre[j] = z;
            let a = if z > 0.0 { z } else { 0.0 };
            act[j] = match mask {
                Some(m) => a * m[j],
                None => a,
            };
        }
        let mut logits = [v[b2], v[b2 + 1]];
        for (c, l) in logits.iter_mut().enumerate() {
            let row = &v[w2 + c * hidden_dim..w2 + (c + 1) * hidden_dim];
            *l += row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
        }
        Activations { pre, act, logits }
    }

    fn check(&self, x: &[f64]) -> Result<(), DimensionMismatch> {
        if x.len() == self.shape.input_dim {
            Ok(())
        } else {
            Err(DimensionMismatch { expected: self.shape.input_dim, got: x.len() })
        }
    }

    /// Eval-mode forward pass (no dropout).
    pub fn forward(&self, x: &[f64]) -> Result<[f64; 2], DimensionMismatch> {
        self.check(x)?;
        Ok(self.activations(x, None).logits)
    }

    /// Forward pass with an explicit dropout mask (see [`Self::dropout_mask`]).
    pub fn forward_masked(&self, x: &[f64], mask: &[f64]) -> Result<[f64; 2], DimensionMismatch> {
        self.check(x)?;
        Ok(self.activations(x, Some(mask)).logits)
    }

    /// Forward pass with dropout active when `train_mode` is set.
    pub fn forward_mode<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        train_mode: bool,
        rng: &mut R,
    ) -> Result<[f64; 2], DimensionMismatch> {
        if train_mode {
            let mask = self.dropout_mask(rng);
            self.forward_masked(x, &mask)
        } else {
            self.forward(x)
        }
    }

    /// Cross-entropy loss and its gradients for one example.
    pub fn loss_gradient(
        &self,
        x: &[f64],
        label: RiskLabel,
        mask: Option<&[f64]>,
    ) -> Result<HeadGradient, DimensionMismatch> {
        self.check(x)?;
        let HeadShape { input_dim, hidden_dim, .. } = self.shape;
        let [w1, b1, w2, b2] = self.shape.offsets();
        let v = &self.values;
        let Activations { pre, act, logits } = self.activations(x, mask);

        let loss = cross_entropy(logits, label);
        let probs = softmax2(logits);
        let mut dz = probs;
        dz[label.index()] -= 1.0;

        let mut g = vec![0.0; v.len()];
        g[b2] = dz[0];
        g[b2 + 1] = dz[1];
        let mut d_pre = vec![0.0; hidden_dim];
        for j in 0..hidden_dim {
            g[w2 + j] = dz[0] * act[j];
            g[w2 + hidden_dim + j] = dz[1] * act[j];
            let d_act = dz[0] * v[w2 + j] + dz[1] * v[w2 + hidden_dim + j];
            let m = mask.map_or(1.0, |m| m[j]);
            d_pre[j] = if pre[j] > 0.0 { d_act * m } else { 0.0 };
        }
        let mut d_x = vec![0.0; input_dim];
        for (j, &dp) in d_pre.iter().enumerate() {
            if dp == 0.0 {
                continue;
            }
            g[b1 + j] = dp;
            let row = w1 + j * input_dim;
            for i in 0..input_dim {
                g[row + i] = dp * x[i];
                d_x[i] += dp * v[row + i];
            }
        }
        Ok(HeadGradient { loss, params: g, input: d_x })
    }
}

/// Numerically stable two-class softmax.
pub(crate) fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = if z[0] > z[1] { z[0] } else { z[1] };
    let e0 = libm::exp(z[0] - m);
    let e1 = libm::exp(z[1] - m);
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

pub fn cross_entropy(logits: [f64; 2], label: RiskLabel) -> f64 {
    let m = if logits[0] > logits[1] { logits[0] } else { logits[1] };
    let lse = m + libm::log(libm::exp(logits[0] - m) + libm::exp(logits[1] - m));
    lse - logits[label.index()]
}
