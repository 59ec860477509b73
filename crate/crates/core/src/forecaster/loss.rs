//! Masked L1 reconstruction/forecast losses and the uncertainty-weighted sum.

use super::PastSequence;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, BoxWithVelocity};
use crate::motion::ForecastHorizon;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unnormalised L1 over the valid (most recent) steps; `pred` is aligned at the end.
pub(crate) fn past_abs_sum(truth: &PastSequence, pred: &[[f64; 8]], grad: Option<(&mut [[f64; 8]], f64)>) -> Result<f64> {
    let n = truth.valid_len;
    if pred.len() < n {
        return Err(Error::DimensionMismatch {
            context: "past reconstruction length",
            expected: n,
            actual: pred.len(),
        });
    }
    let truth = truth.valid_steps();
    let offset = pred.len() - n;
    let mut sum = 0.0;
    let mut grad = grad;
    for (j, t) in truth.iter().enumerate() {
        let t = t.to_array();
        for k in 0..8 {
            let d = pred[offset + j][k] - t[k];
            sum += d.abs();
            if let Some((g, w)) = grad.as_mut() {
                g[offset + j][k] += *w * sign(d);
            }
        }
    }
    Ok(sum)
}

pub(crate) fn future_abs_sum(
    truth: &[BoundingBox],
    pred: &[[f64; 4]],
    valid_len: usize,
    grad: Option<(&mut [[f64; 4]], f64)>,
) -> Result<f64> {
    if valid_len > truth.len() || valid_len > pred.len() {
        return Err(Error::DimensionMismatch {
            context: "future horizon length",
            expected: valid_len,
            actual: truth.len().min(pred.len()),
        });
    }
    let mut sum = 0.0;
    let mut grad = grad;
    for i in 0..valid_len {
        let t = truth[i].to_array();
        for k in 0..4 {
            let d = pred[i][k] - t[k];
            sum += d.abs();
            if let Some((g, w)) = grad.as_mut() {
                g[i][k] += *w * sign(d);
            }
        }
    }
    Ok(sum)
}

/// Batch reconstruction loss, normalised by `8 · Σ valid_len`.
pub fn loss_past_batch(items: &[(&PastSequence, &[BoxWithVelocity])]) -> Result<f64> {
    let count: usize = items.iter().map(|(t, _)| t.valid_len).sum();
    if count == 0 {
        return Err(Error::Empty("past loss batch"));
    }
    let mut sum = 0.0;
    for (truth, pred) in items {
        let arr: Vec<[f64; 8]> = pred.iter().map(BoxWithVelocity::to_array).collect();
        sum += past_abs_sum(truth, &arr, None)?;
    }
    Ok(sum / (8 * count) as f64)
}

pub fn loss_past(truth: &PastSequence, pred: &[BoxWithVelocity]) -> Result<f64> {
    loss_past_batch(&[(truth, pred)])
}

/// Batch forecast loss over `(truth, prediction, valid_len)`, normalised by `4 · Σ valid_len`.
pub fn loss_future_batch(items: &[(&[BoundingBox], &ForecastHorizon, usize)]) -> Result<f64> {
    let count: usize = items.iter().map(|(_, _, n)| n).sum();
    if count == 0 {
        return Err(Error::Empty("future loss batch"));
    }
    let mut sum = 0.0;
    for (truth, pred, n) in items {
        let arr: Vec<[f64; 4]> = pred.boxes.iter().map(BoundingBox::to_array).collect();
        sum += future_abs_sum(truth, &arr, *n, None)?;
    }
    Ok(sum / (4 * count) as f64)
}

pub fn loss_future(truth: &[BoundingBox], pred: &ForecastHorizon, valid_len: usize) -> Result<f64> {
    loss_future_batch(&[(truth, pred, valid_len)])
}

pub fn forecast_loss(l_past: f64, l_future: f64) -> f64 {
    l_past + l_future
}

/// `½ (Σ e^{−sᵢ} Lᵢ + Σ sᵢ)`.
pub fn uncertainty_loss(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "uncertainty weights",
            expected: losses.len(),
            actual: weights.len(),
        });
    }
    let weighted: f64 = losses.iter().zip(weights).map(|(l, s)| (-s).exp() * l).sum();
    Ok(0.5 * (weighted + weights.iter().sum::<f64>()))
}

/// Partial derivatives `(∂/∂Lᵢ, ∂/∂sᵢ)`.
pub fn uncertainty_loss_grad(losses: &[f64], weights: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if losses.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "uncertainty weights",
            expected: losses.len(),
            actual: weights.len(),
        });
    }
    let dl = weights.iter().map(|s| 0.5 * (-s).exp()).collect();
    let ds = losses
        .iter()
        .zip(weights)
        .map(|(l, s)| 0.5 * (1.0 - (-s).exp() * l))
        .collect();
    Ok((dl, ds))
}
