use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::loss::{future_abs_sum, past_abs_sum};
use super::model::{ForecasterParams, Tape};
use super::{uncertainty_loss, ForecasterConfig, TrainingSample};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Index of `s_for` in [`ForecasterParams::uncertainty`].
const S_FOR: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// First epoch (0-based) trained at `decayed_learning_rate`.
    pub decay_epoch: usize,
    pub decayed_learning_rate: f64,
    /// Extra multiplicative decay per epoch on top of the step schedule; 1 disables it.
    pub epoch_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Initial `[s_det, s_id, s_for]`.
    pub init_uncertainty: [f64; 3],
    pub shuffle: bool,
    /// Distance in frames between consecutive training windows of one track.
    pub anchor_stride: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-4,
            decay_epoch: 20,
            decayed_learning_rate: 1e-5,
            epoch_decay: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            init_uncertainty: [0.0; 3],
            shuffle: true,
            anchor_stride: 1,
        }
    }
}

impl TrainingConfig {
    /// Short schedule for the small desk model.
    pub fn desk() -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            learning_rate: 3e-3,
            decay_epoch: 8,
            decayed_learning_rate: 5e-4,
            anchor_stride: 4,
            ..Self::default()
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = if epoch < self.decay_epoch {
            self.learning_rate
        } else {
            self.decayed_learning_rate
        };
        if self.epoch_decay == 1.0 {
            base
        } else {
            base * self.epoch_decay.powi(epoch as i32)
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.epochs == 0 {
            errors.push("training.epochs must be > 0".into());
        }
        if self.anchor_stride == 0 {
            errors.push("training.anchor_stride must be > 0".into());
        }
        if self.batch_size == 0 {
            errors.push("training.batch_size must be > 0".into());
        }
        for (name, v) in [
            ("training.learning_rate", self.learning_rate),
            ("training.decayed_learning_rate", self.decayed_learning_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errors.push(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        for (name, v) in [("training.beta1", self.beta1), ("training.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                errors.push(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.epoch_decay > 0.0 && self.epoch_decay <= 1.0) {
            errors.push(format!("training.epoch_decay must lie in (0, 1], got {}", self.epoch_decay));
        }
        if !(self.epsilon > 0.0) {
            errors.push(format!("training.epsilon must be > 0, got {}", self.epsilon));
        }
        for (i, s) in self.init_uncertainty.iter().enumerate() {
            if !(-2.0..=5.0).contains(s) {
                errors.push(format!("training.init_uncertainty[{i}] must lie in [-2, 5], got {s}"));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub past: f64,
    pub future: f64,
    /// `past + future`
    pub forecast: f64,
    /// Uncertainty-weighted objective actually minimised.
    pub total: f64,
}

/// Loss on a mini-batch and its gradient with respect to every tensor.
pub fn batch_loss_and_grad(
    params: &ForecasterParams,
    samples: &[&TrainingSample],
) -> Result<(BatchLoss, ForecasterParams)> {
    let (loss, grad) = batch_eval(params, samples, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn batch_eval(
    params: &ForecasterParams,
    samples: &[&TrainingSample],
    want_grad: bool,
) -> Result<(BatchLoss, Option<ForecasterParams>)> {
    let count_p: usize = samples.iter().map(|s| s.past.valid_len).sum();
    let count_f: usize = samples.iter().map(|s| s.future_valid_len).sum();
    if count_p == 0 || count_f == 0 {
        return Err(Error::Empty("training batch"));
    }
    let s_for = params.uncertainty[S_FOR];
    let d_lfor = 0.5 * (-s_for).exp();
    let wp = d_lfor / (8 * count_p) as f64;
    let wf = d_lfor / (4 * count_f) as f64;
    let (p, q) = (params.config.p, params.config.q);

    let mut grad = want_grad.then(|| params.zeros_like());
    let mut past_sum = 0.0;
    let mut future_sum = 0.0;
    for s in samples {
        let tape = Tape::forward(params, s)?;
        if let Some(g) = grad.as_mut() {
            let mut d_past = vec![[0.0; 8]; p];
            let mut d_future = vec![[0.0; 4]; q];
            past_sum += past_abs_sum(&s.past, &tape.past_pred, Some((&mut d_past, wp)))?;
            future_sum += future_abs_sum(
                &s.future_boxes,
                &tape.future_pred,
                s.future_valid_len,
                Some((&mut d_future, wf)),
            )?;
            tape.backward(params, &d_past, &d_future, g);
        } else {
            past_sum += past_abs_sum(&s.past, &tape.past_pred, None)?;
            future_sum += future_abs_sum(&s.future_boxes, &tape.future_pred, s.future_valid_len, None)?;
        }
    }
    let past = past_sum / (8 * count_p) as f64;
    let future = future_sum / (4 * count_f) as f64;
    let forecast = past + future;
    // only the forecasting task is live; s_det and s_id receive no gradient
    let total = uncertainty_loss(&[forecast], &[s_for])?;
    if let Some(g) = grad.as_mut() {
        g.uncertainty[S_FOR] = 0.5 * (1.0 - (-s_for).exp() * forecast);
    }
    Ok((
        BatchLoss {
            past,
            future,
            forecast,
            total,
        },
        grad,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean forecast loss over the epoch's batches.
    pub loss: f64,
    /// Mean weighted objective.
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.loss, e.lr);
        }
        s
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &ForecasterParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ForecasterParams, grad: &ForecasterParams, lr: f64, cfg: &TrainingConfig) {
        self.t += 1;
        if lr == 0.0 {
            return;
        }
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Trains a freshly initialised model (seeded by `tcfg.seed`).
pub fn train(
    samples: &[TrainingSample],
    config: &ForecasterConfig,
    tcfg: &TrainingConfig,
) -> Result<(ForecasterParams, TrainingLog)> {
    let config = config.clone().validated()?;
    let mut errors = Vec::new();
    tcfg.validate(&mut errors);
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let mut params = ForecasterParams::random(config, tcfg.seed);
    params.uncertainty = tcfg.init_uncertainty.to_vec();
    let log = train_in_place(&mut params, samples, tcfg)?;
    Ok((params, log))
}

/// Continues training `params`.
pub fn train_in_place(
    params: &mut ForecasterParams,
    samples: &[TrainingSample],
    tcfg: &TrainingConfig,
) -> Result<TrainingLog> {
    if samples.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    // shuffling uses its own stream so it does not depend on initialisation draws
    let mut rng = SeededRng::new(tcfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = Adam::new(params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainingLog::default();
    let mut batch_no = 0usize;
    for epoch in 0..tcfg.epochs {
        if tcfg.shuffle {
            rng.shuffle(&mut order);
        }
        let lr = tcfg.lr_at(epoch);
        let (mut loss_acc, mut total_acc, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = batch_loss_and_grad(params, &batch)?;
            if !loss.total.is_finite() || !grad.is_finite() {
                return Err(Error::NanLoss {
                    batch: batch_no,
                    samples: chunk.to_vec(),
                });
            }
            adam.step(params, &grad, lr, tcfg);
            if !params.is_finite() {
                return Err(Error::NanLoss {
                    batch: batch_no,
                    samples: chunk.to_vec(),
                });
            }
            loss_acc += loss.forecast;
            total_acc += loss.total;
            batches += 1;
            batch_no += 1;
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: loss_acc / batches as f64,
            total: total_acc / batches as f64,
            lr,
        };
        log::debug!("epoch {} loss {:.6} lr {}", entry.epoch, entry.loss, entry.lr);
        log.epochs.push(entry);
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Central differences on the weighted objective for every parameter entry.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// round-off on near-zero gradients from dominating.
pub fn gradient_check(
    params: &ForecasterParams,
    samples: &[&TrainingSample],
    step: f64,
    floor: f64,
) -> Result<GradientCheckReport> {
    let (_, analytic) = batch_loss_and_grad(params, samples)?;
    let layout = params.layout();
    let analytic = analytic.tensors().iter().map(|t| t.to_vec()).collect::<Vec<_>>();
    let mut probe = params.clone();
    let mut report = GradientCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (ti, (name, _)) in layout.iter().enumerate() {
        for i in 0..analytic[ti].len() {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + step;
            let plus = batch_eval(&probe, samples, false)?.0.total;
            probe.tensors_mut()[ti][i] = orig - step;
            let minus = batch_eval(&probe, samples, false)?.0.total;
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = rel;
                report.worst_tensor = name.clone();
                report.worst_index = i;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
