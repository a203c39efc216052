//! Binary cross-entropy over a batch of probabilities.

use thiserror::Error;

use crate::tensor::{Element, Tensor};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before any log: the loss is
/// undefined at exactly 0 or 1.
pub const PROB_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("labels ({labels}) and probabilities ({probs}) differ in length")]
    LengthMismatch { labels: usize, probs: usize },
    #[error("label at index {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: f64 },
}

/// A validated batch of binary labels and clamped predicted probabilities.
#[derive(Debug, Clone)]
pub struct BceBatch<T: Element> {
    labels: Vec<T>,
    probs: Vec<T>,
}

impl<T: Element> BceBatch<T> {
    pub fn new(labels: &[T], probs: &[T]) -> Result<Self, LossError> {
        if labels.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        if labels.len() != probs.len() {
            return Err(LossError::LengthMismatch {
                labels: labels.len(),
                probs: probs.len(),
            });
        }
        for (index, &y) in labels.iter().enumerate() {
            if y != T::ZERO && y != T::ONE {
                return Err(LossError::InvalidLabel {
                    index,
                    value: y.to_f64(),
                });
            }
        }
        let lo = T::from_f64(PROB_CLAMP_EPS);
        let hi = T::ONE - lo;
        let probs = probs.iter().map(|&p| p.maximum(lo).minimum(hi)).collect();
        Ok(Self {
            labels: labels.to_vec(),
            probs,
        })
    }

    pub fn from_tensors(labels: &Tensor<T>, probs: &Tensor<T>) -> Result<Self, LossError> {
        Self::new(labels.data(), probs.data())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    /// Probabilities after clamping.
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

/// Mean binary cross-entropy (natural log) and the per-sample gradient of
/// the loss with respect to each probability:
///
/// `loss = -(1/N) * sum(y*ln(p) + (1-y)*ln(1-p))`
/// `dloss/dp_i = -(1/N) * (y_i/p_i - (1-y_i)/(1-p_i))`
pub fn bce_loss<T: Element>(batch: &BceBatch<T>) -> (T, Vec<T>) {
    let n = T::from_f64(batch.len() as f64);
    let mut total = T::ZERO;
    let mut grad = Vec::with_capacity(batch.len());
    for (&y, &p) in batch.labels.iter().zip(&batch.probs) {
        total = total + y * p.ln() + (T::ONE - y) * (T::ONE - p).ln();
        let g = -(y / p - (T::ONE - y) / (T::ONE - p)) / n;
        grad.push(g);
    }
    (-total / n, grad)
}
