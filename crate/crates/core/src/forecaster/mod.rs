//! Recurrent trajectory forecaster.
//!
//! A GRU encodes the last `p` boxes and velocities; its final state feeds a
//! past decoder (reconstruction) and a future decoder that also sees a
//! projected whole-frame context vector. Future velocities are turned into
//! boxes by cumulative summation anchored at the last observed box.

mod checkpoint;
mod loss;
mod model;
pub mod nn;
mod predictor;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{velocities_from_boxes, BoundingBox, BoxWithVelocity};
use crate::io::MotSequence;

pub use checkpoint::{load_params, save_params, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use loss::{
    forecast_loss, loss_future, loss_future_batch, loss_past, loss_past_batch, uncertainty_loss,
    uncertainty_loss_grad,
};
pub use model::{
    decode_future, decode_past, encode_embedding, encode_past, forecast, trajectory_concat,
    ForecasterParams,
};
pub use predictor::LearnedPredictor;
pub use train::{
    batch_loss_and_grad, gradient_check, train, train_in_place, BatchLoss, EpochLog, GradientCheckReport,
    TrainingConfig, TrainingLog,
};

/// How future velocities become boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    /// `b̂ᵢ = last + Zᵢ` with `Zᵢ` the running velocity sum.
    #[default]
    Corrected,
    /// `b̂ᵢ = last + i·Zᵢ`, the printed form; quadratic for constant velocity.
    Literal,
}

/// Where the future decoder's context vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    /// All-zero context (no visual information).
    #[default]
    Zero,
    /// Regime features derived from a synthetic scene description.
    Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    /// Past window length.
    pub p: usize,
    /// Future horizon.
    pub q: usize,
    /// GRU hidden width shared by encoder and decoders.
    pub hidden: usize,
    /// Context vector width.
    pub embed_dim: usize,
    /// Width of each of the two encodings; their concatenation is `2 × feature_dim`.
    pub feature_dim: usize,
    pub concat_mode: ConcatMode,
    pub context: ContextSource,
    /// Divides box coordinates on the way in and scales reconstructions on the way out.
    pub pos_scale: f64,
    /// Same for velocities, including the predicted future velocities.
    pub vel_scale: f64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            p: 10,
            q: 60,
            hidden: 256,
            embed_dim: 256,
            feature_dim: 256,
            concat_mode: ConcatMode::Corrected,
            context: ContextSource::Zero,
            pos_scale: 1.0,
            vel_scale: 1.0,
        }
    }
}

impl ForecasterConfig {
    /// Small widths and input scaling that train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            hidden: 32,
            embed_dim: 8,
            feature_dim: 32,
            pos_scale: 1000.0,
            vel_scale: 4.0,
            ..Self::default()
        }
    }

    pub fn concat_dim(&self) -> usize {
        2 * self.feature_dim
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.p < 2 {
            errors.push(format!("forecaster.p must be >= 2, got {}", self.p));
        }
        if self.q < 1 {
            errors.push("forecaster.q must be >= 1".into());
        }
        for (name, v) in [
            ("forecaster.hidden", self.hidden),
            ("forecaster.embed_dim", self.embed_dim),
            ("forecaster.feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be > 0"));
            }
        }
        for (name, v) in [
            ("forecaster.pos_scale", self.pos_scale),
            ("forecaster.vel_scale", self.vel_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
    }

    pub fn validated(self) -> Result<Self> {
        let mut errors = Vec::new();
        self.validate(&mut errors);
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(errors))
        }
    }
}

/// Fixed-width past window, oldest first, zero-padded at the front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastSequence {
    pub steps: Vec<BoxWithVelocity>,
    pub valid_len: usize,
}

impl PastSequence {
    /// Window over the trailing `min(len, p)` boxes. Velocities use the box
    /// just before the window when the slice has one.
    pub fn from_boxes(boxes: &[BoundingBox], p: usize) -> Self {
        let vels = velocities_from_boxes(boxes);
        let valid_len = boxes.len().min(p);
        let start = boxes.len() - valid_len;
        let mut steps = vec![BoxWithVelocity::ZERO; p - valid_len];
        steps.extend(
            boxes[start..]
                .iter()
                .zip(&vels[start..])
                .map(|(b, v)| BoxWithVelocity { bbox: *b, vel: *v }),
        );
        Self { steps, valid_len }
    }

    pub fn from_steps(valid: &[BoxWithVelocity], p: usize) -> Result<Self> {
        if valid.len() > p {
            return Err(Error::DimensionMismatch {
                context: "past sequence length",
                expected: p,
                actual: valid.len(),
            });
        }
        let mut steps = vec![BoxWithVelocity::ZERO; p - valid.len()];
        steps.extend_from_slice(valid);
        Ok(Self {
            steps,
            valid_len: valid.len(),
        })
    }

    pub fn p(&self) -> usize {
        self.steps.len()
    }

    pub fn valid_steps(&self) -> &[BoxWithVelocity] {
        &self.steps[self.steps.len() - self.valid_len..]
    }

    /// Same observations in a wider window.
    pub fn repadded(&self, p: usize) -> Result<Self> {
        Self::from_steps(self.valid_steps(), p)
    }

    pub fn last_box(&self) -> Option<BoundingBox> {
        (self.valid_len > 0).then(|| self.steps[self.steps.len() - 1].bbox)
    }
}

/// One supervised window: past, (possibly short) future, and context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub past: PastSequence,
    /// Exactly `q` entries; entries past `future_valid_len` are zero padding.
    pub future_boxes: Vec<BoundingBox>,
    pub future_valid_len: usize,
    pub last_box: BoundingBox,
    pub context: Vec<f64>,
}

impl TrainingSample {
    pub fn new(past: PastSequence, future: &[BoundingBox], q: usize, context: Vec<f64>) -> Result<Self> {
        let last_box = past
            .last_box()
            .ok_or(Error::Empty("training sample past"))?;
        let future_valid_len = future.len().min(q);
        if future_valid_len == 0 {
            return Err(Error::Empty("training sample future"));
        }
        let mut future_boxes = future[..future_valid_len].to_vec();
        future_boxes.resize(q, BoundingBox::ZERO);
        Ok(Self {
            past,
            future_boxes,
            future_valid_len,
            last_box,
            context,
        })
    }

    /// Every window of one contiguous track with at least two past boxes and
    /// one future box. `anchor_stride` thins the windows.
    pub fn windows_from_track(
        boxes: &[BoundingBox],
        p: usize,
        q: usize,
        anchor_stride: usize,
        context: impl Fn(usize) -> Vec<f64>,
    ) -> Vec<TrainingSample> {
        let stride = anchor_stride.max(1);
        let mut out = Vec::new();
        // anchor `s` is the first future index; the past is boxes[..s]
        let mut s = 2;
        while s < boxes.len() {
            let past_start = s.saturating_sub(p + 1);
            let past = PastSequence::from_boxes(&boxes[past_start..s], p);
            let future_end = (s + q).min(boxes.len());
            if let Ok(sample) = TrainingSample::new(past, &boxes[s..future_end], q, context(s)) {
                out.push(sample);
            }
            s += stride;
        }
        out
    }
}

/// Training windows over every track of a ground-truth file. Tracks are split
/// at frame gaps; `context(frame)` is consulted for the last past frame only
/// when the model takes scene context.
pub fn samples_from_sequence(
    gt: &MotSequence,
    config: &ForecasterConfig,
    anchor_stride: usize,
    context: &dyn Fn(u32) -> Option<Vec<f64>>,
) -> Vec<TrainingSample> {
    let mut out = Vec::new();
    for (_, track) in gt.tracks() {
        let mut start = 0;
        for end in 1..=track.len() {
            if end < track.len() && track[end].0 == track[end - 1].0 + 1 {
                continue;
            }
            let run = &track[start..end];
            let boxes: Vec<BoundingBox> = run.iter().map(|(_, b)| *b).collect();
            out.extend(TrainingSample::windows_from_track(
                &boxes,
                config.p,
                config.q,
                anchor_stride,
                |s| match config.context {
                    ContextSource::Scene => context(run[s - 1].0).unwrap_or_default(),
                    ContextSource::Zero => Vec::new(),
                },
            ));
            start = end;
        }
    }
    out
}
