//! Covariance penalty used to train a fairness-aware surrogate teacher.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// `|cov(pred, s)|` over masked nodes, with the population covariance.
/// `pred` is an n x 1 tensor and may be tracked.
pub fn covariance_penalty(tape: &mut Tape, pred: &Tensor, s: &[u8], mask: &[bool]) -> Result<Tensor> {
    let picked: Vec<f64> = s.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v as f64).collect();
    let count = picked.len();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mean_s = picked.iter().sum::<f64>() / count as f64;
    if picked.iter().all(|&v| v == picked[0]) {
        return Err(Error::Undefined("covariance with a single sensitive group".into()));
    }
    let p = tape.slice_rows(pred, mask)?;
    let mean_p = tape.mean(&p)?;
    let centered = tape.sub(&p, &mean_p)?;
    let s_centered = Tensor::column(picked.iter().map(|v| v - mean_s).collect());
    let prod = tape.mul(&centered, &s_centered)?;
    let cov = tape.mean(&prod)?;
    tape.abs(&cov)
}

/// [`covariance_penalty`] on the positive-class probability
/// `sigmoid(logit₁ − logit₀)` of a binary classifier.
pub fn fairness_penalty(tape: &mut Tape, logits: &Tensor, s: &[u8], mask: &[bool]) -> Result<Tensor> {
    if logits.cols() != 2 {
        return Err(Error::Config(format!("fairness penalty needs 2 classes, got {}", logits.cols())));
    }
    let margin = tape.matmul(logits, &Tensor::column(vec![-1.0, 1.0]))?;
    let prob = tape.sigmoid(&margin)?;
    covariance_penalty(tape, &prob, s, mask)
}
