//! Online tracker with three association stages.
//!
//! 1. motion fusion: appearance distance blended with IOU against the track's
//!    recent box and its short-term forecast window, gated at `tau_fuse`;
//! 2. IOU matching for tracks that were tracked in the previous frame;
//! 3. occlusion forecasting: an unmatched track whose forecast is plausible
//!    stays alive and reports the forecast box.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assignment::solve;
use crate::error::{Error, Result};
use crate::forecaster::{ForecasterParams, LearnedPredictor};
use crate::geometry::{
    center_distance_normalized, cosine_distance, iou_distance, normalized, with_velocities, BoundingBox,
    BoxWithVelocity, FrameObservations,
};
use crate::matrix::Matrix;
use crate::motion::{CvPredictor, ForecastHorizon, KalmanConfig, KalmanPredictor, MotionPredictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    New,
    Tracked,
    Lost,
    Removed,
}

impl TrackState {
    pub fn can_become(self, next: TrackState) -> bool {
        use TrackState::*;
        matches!(
            (self, next),
            (New, Tracked) | (New, Removed) | (Tracked, Lost) | (Lost, Tracked) | (Lost, Removed)
        ) || (self == next && self != Removed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFlag {
    Detected,
    Forecasted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub frame: u32,
    pub id: u32,
    pub bbox: BoundingBox,
    pub flag: OutputFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    Cv,
    Kalman,
    Learned,
}

impl PredictorKind {
    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Cv => "cv",
            PredictorKind::Kalman => "kalman",
            PredictorKind::Learned => "learned",
        }
    }
}

/// A concrete predictor source; each new track gets its own instance.
#[derive(Clone)]
pub enum PredictorSpec {
    Cv,
    Kalman(KalmanConfig),
    Learned(Arc<ForecasterParams>),
}

impl PredictorSpec {
    pub fn build(&self) -> Box<dyn MotionPredictor> {
        match self {
            PredictorSpec::Cv => Box::new(CvPredictor::new()),
            PredictorSpec::Kalman(cfg) => Box::new(KalmanPredictor::new(*cfg)),
            PredictorSpec::Learned(params) => Box::new(LearnedPredictor::new(params.clone())),
        }
    }

    pub fn kind(&self) -> PredictorKind {
        match self {
            PredictorSpec::Cv => PredictorKind::Cv,
            PredictorSpec::Kalman(_) => PredictorKind::Kalman,
            PredictorSpec::Learned(_) => PredictorKind::Learned,
        }
    }
}

impl fmt::Debug for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    /// Stage 1: appearance + forecast fusion.
    pub motion_fusion: bool,
    /// Stage 2: IOU matching.
    pub iou: bool,
    /// Stage 3: occlusion forecasting.
    pub occlusion: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            motion_fusion: true,
            iou: true,
            occlusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub p: usize,
    pub q: usize,
    pub det_conf_thresh: f64,
    pub lambda_fuse: f64,
    pub l_fuse: usize,
    pub tau_fuse: f64,
    pub tau_iou: f64,
    pub lambda_occ: f64,
    pub max_time_occ: u32,
    pub thresh_occ: f64,
    pub max_lost: u32,
    pub frame_w: f64,
    pub frame_h: f64,
    pub predictor: PredictorKind,
    pub embedding_momentum: f64,
    pub stages: StageToggles,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            p: 10,
            q: 60,
            det_conf_thresh: 0.4,
            lambda_fuse: 0.75,
            l_fuse: 10,
            tau_fuse: 0.4,
            tau_iou: 0.5,
            lambda_occ: 0.5,
            max_time_occ: 20,
            thresh_occ: 0.55,
            max_lost: 30,
            frame_w: 1920.0,
            frame_h: 1080.0,
            predictor: PredictorKind::Cv,
            embedding_momentum: 0.9,
            stages: StageToggles::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("tracker.det_conf_thresh", self.det_conf_thresh),
            ("tracker.lambda_fuse", self.lambda_fuse),
            ("tracker.tau_fuse", self.tau_fuse),
            ("tracker.tau_iou", self.tau_iou),
            ("tracker.lambda_occ", self.lambda_occ),
            ("tracker.thresh_occ", self.thresh_occ),
            ("tracker.embedding_momentum", self.embedding_momentum),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errors.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.p < 2 {
            errors.push(format!("tracker.p must be >= 2, got {}", self.p));
        }
        if self.q < 1 {
            errors.push("tracker.q must be >= 1".into());
        }
        if self.l_fuse < 1 || self.l_fuse > self.q {
            errors.push(format!(
                "tracker.l_fuse must lie in [1, q = {}], got {}",
                self.q, self.l_fuse
            ));
        }
        if self.max_time_occ == 0 {
            errors.push("tracker.max_time_occ must be > 0".into());
        }
        if self.max_time_occ > self.max_lost {
            errors.push(format!(
                "tracker.max_time_occ ({}) must not exceed tracker.max_lost ({})",
                self.max_time_occ, self.max_lost
            ));
        }
        for (name, v) in [("tracker.frame_w", self.frame_w), ("tracker.frame_h", self.frame_h)] {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.stages.motion_fusion && !self.stages.iou {
            errors.push("tracker.stages: at least one of motion_fusion or iou must be enabled".into());
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

pub struct TrackRecord {
    pub id: u32,
    pub state: TrackState,
    /// Detected boxes only, oldest first, at most `p + 1` (the extra one gives the oldest a velocity).
    pub history: VecDeque<(u32, BoundingBox)>,
    pub embedding: Vec<f64>,
    pub horizon: Option<ForecastHorizon>,
    /// Frames since the last detection match.
    pub lost_time: u32,
    pub last_frame: u32,
    /// Frame of the last detection match.
    pub last_detection_frame: u32,
    predictor: Box<dyn MotionPredictor>,
}

impl fmt::Debug for TrackRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrackRecord")
            .field("id", &self.id)
            .field("state", &self.state)
            .field("history", &self.history)
            .field("horizon", &self.horizon)
            .field("lost_time", &self.lost_time)
            .field("last_frame", &self.last_frame)
            .finish_non_exhaustive()
    }
}

impl TrackRecord {
    pub fn new(
        id: u32,
        frame: u32,
        bbox: BoundingBox,
        embedding: Vec<f64>,
        state: TrackState,
        predictor: Box<dyn MotionPredictor>,
    ) -> Self {
        let mut t = Self {
            id,
            state,
            history: VecDeque::new(),
            embedding,
            horizon: None,
            lost_time: 0,
            last_frame: frame,
            last_detection_frame: frame,
            predictor,
        };
        t.predictor.observe(frame, bbox);
        t.history.push_back((frame, bbox));
        t
    }

    pub fn last_box(&self) -> BoundingBox {
        self.history.back().map(|(_, b)| *b).unwrap_or(BoundingBox::ZERO)
    }

    /// History paired with per-step velocities, oldest first.
    pub fn history_with_velocity(&self) -> Vec<BoxWithVelocity> {
        let boxes: Vec<BoundingBox> = self.history.iter().map(|(_, b)| *b).collect();
        with_velocities(&boxes)
    }

    fn set_state(&mut self, next: TrackState) {
        debug_assert!(self.state.can_become(next), "{:?} -> {next:?}", self.state);
        self.state = next;
    }

    /// Forecast boxes from `frame` onwards (empty when none cover it).
    fn forecast_from(&self, frame: u32) -> &[BoundingBox] {
        match &self.horizon {
            Some(h) => {
                let offset = frame.saturating_sub(h.origin_frame) as usize;
                h.boxes.get(offset..).unwrap_or(&[])
            }
            None => &[],
        }
    }

    fn record_detection(&mut self, frame: u32, bbox: BoundingBox, embedding: &[f64], cfg: &TrackerConfig, context: Option<&[f64]>) -> Result<()> {
        self.history.push_back((frame, bbox));
        while self.history.len() > cfg.p + 1 {
            self.history.pop_front();
        }
        self.predictor.observe_context(context);
        self.predictor.observe(frame, bbox);
        self.embedding = smooth_embedding(&self.embedding, embedding, cfg.embedding_momentum)?;
        self.lost_time = 0;
        self.last_frame = frame;
        self.last_detection_frame = frame;
        self.refresh_horizon(frame, cfg.q);
        Ok(())
    }

    fn refresh_horizon(&mut self, frame: u32, q: usize) {
        self.horizon = if self.history.len() >= 2 {
            match self.predictor.predict(q) {
                Ok(mut h) => {
                    h.origin_frame = frame + 1;
                    Some(h)
                }
                Err(e) => {
                    log::debug!("track {}: no forecast ({e})", self.id);
                    None
                }
            }
        } else {
            None
        };
    }
}

/// Motion cue of one track for Stage 1: its most recent box and the forecast
/// boxes starting at the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionCue<'a> {
    pub last_box: BoundingBox,
    pub forecast: &'a [BoundingBox],
}

/// Stage 1 cost matrix.
///
/// Per track, `d` is the IOU distance of the last box, multiplied element-wise
/// by the per-detection minimum IOU distance over the first `l` forecast
/// boxes. Appearance distances are doubled where `d ≥ 1`, and the row is
/// `λ·reid + (1 − λ)·d`.
pub fn fuse_motion(
    reid_dist: &Matrix,
    tracks: &[MotionCue<'_>],
    detections: &[BoundingBox],
    lambda: f64,
    l: usize,
) -> Result<Matrix> {
    if reid_dist.rows() != tracks.len() || reid_dist.cols() != detections.len() {
        return Err(Error::DimensionMismatch {
            context: "re-identification distance shape",
            expected: tracks.len() * detections.len(),
            actual: reid_dist.rows() * reid_dist.cols(),
        });
    }
    let mut cost = Matrix::zeros(tracks.len(), detections.len());
    for (i, cue) in tracks.iter().enumerate() {
        let mut d = iou_distance(&[cue.last_box], detections).row(0).to_vec();
        let window = &cue.forecast[..cue.forecast.len().min(l)];
        if !window.is_empty() {
            let m = iou_distance(window, detections);
            for (j, dj) in d.iter_mut().enumerate() {
                let best = (0..m.rows()).map(|r| m[(r, j)]).fold(f64::INFINITY, f64::min);
                *dj *= best;
            }
        }
        for (j, dj) in d.iter().enumerate() {
            let mut reid = reid_dist[(i, j)];
            if *dj >= 1.0 {
                reid *= 2.0;
            }
            cost[(i, j)] = lambda * reid + (1.0 - lambda) * dj;
        }
    }
    Ok(cost)
}

/// Stage 3 for an unmatched track. `track.lost_time` is the count before this
/// frame's increment.
pub fn occlusion_forecast(track: &TrackRecord, cfg: &TrackerConfig) -> Option<BoundingBox> {
    let h = track.horizon.as_ref().filter(|h| !h.is_empty())?;
    let cost0 = track.lost_time as f64 / cfg.max_time_occ as f64;
    let idx = (track.lost_time as usize).min(h.len() - 1);
    let bbox = h.boxes[idx];
    let dist = center_distance_normalized(&bbox, cfg.frame_w, cfg.frame_h);
    let cost = cfg.lambda_occ * dist + (1.0 - cfg.lambda_occ) * cost0;
    (cost < cfg.thresh_occ).then_some(bbox)
}

/// `normalize(momentum·old + (1 − momentum)·new)`.
pub fn smooth_embedding(old: &[f64], new: &[f64], momentum: f64) -> Result<Vec<f64>> {
    if old.len() != new.len() {
        return Err(Error::DimensionMismatch {
            context: "embedding width",
            expected: old.len(),
            actual: new.len(),
        });
    }
    if momentum == 1.0 {
        return Ok(old.to_vec());
    }
    if momentum == 0.0 {
        return Ok(new.to_vec());
    }
    let mixed = old
        .iter()
        .zip(new)
        .map(|(a, b)| momentum * a + (1.0 - momentum) * b)
        .collect();
    normalized(mixed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerStats {
    pub frames: u64,
    pub detections: u64,
    pub tracks_created: u64,
    pub tracks_removed: u64,
    pub stage1_matches: u64,
    pub stage2_matches: u64,
    pub total_matches: u64,
    pub forecast_kept: u64,
}

pub struct Tracker {
    cfg: TrackerConfig,
    predictor: PredictorSpec,
    tracks: Vec<TrackRecord>,
    removed_ids: Vec<u32>,
    next_id: u32,
    last_frame: Option<u32>,
    stats: TrackerStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Fusion,
    Iou,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, predictor: PredictorSpec) -> Result<Self> {
        Ok(Self {
            cfg: cfg.validated()?,
            predictor,
            tracks: Vec::new(),
            removed_ids: Vec::new(),
            next_id: 1,
            last_frame: None,
            stats: TrackerStats::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (non-removed) tracks in creation order.
    pub fn tracks(&self) -> &[TrackRecord] {
        &self.tracks
    }

    pub fn track(&self, id: u32) -> Option<&TrackRecord> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn removed_ids(&self) -> &[u32] {
        &self.removed_ids
    }

    pub fn stats(&self) -> TrackerStats {
        self.stats
    }

    pub fn run<'a>(&mut self, frames: impl IntoIterator<Item = &'a FrameObservations>) -> Result<Vec<TrackOutput>> {
        let mut out = Vec::new();
        for f in frames {
            out.extend(self.step(f)?);
        }
        Ok(out)
    }

    pub fn step(&mut self, obs: &FrameObservations) -> Result<Vec<TrackOutput>> {
        let frame = obs.frame_index;
        if let Some(prev) = self.last_frame {
            if frame <= prev {
                return Err(Error::FrameOrder { previous: prev, got: frame });
            }
        }
        let first_frame = self.last_frame.is_none();
        self.last_frame = Some(frame);
        self.stats.frames += 1;

        let keep: Vec<usize> = (0..obs.len())
            .filter(|&j| obs.confidences[j] > self.cfg.det_conf_thresh)
            .collect();
        let dets: Vec<BoundingBox> = keep.iter().map(|&j| obs.detections[j]).collect();
        let embs: Vec<&[f64]> = keep.iter().map(|&j| obs.embeddings[j].as_slice()).collect();
        self.stats.detections += dets.len() as u64;

        let mut det_taken = vec![false; dets.len()];
        let mut track_match: Vec<Option<(usize, Stage)>> = vec![None; self.tracks.len()];

        if self.cfg.stages.motion_fusion {
            let pool: Vec<usize> = (0..self.tracks.len()).collect();
            self.associate_fusion(frame, &pool, &dets, &embs, &mut track_match, &mut det_taken)?;
        }
        if self.cfg.stages.iou {
            let pool: Vec<usize> = (0..self.tracks.len())
                .filter(|&i| {
                    track_match[i].is_none() && matches!(self.tracks[i].state, TrackState::New | TrackState::Tracked)
                })
                .collect();
            self.associate_iou(frame, &pool, &dets, &mut track_match, &mut det_taken)?;
        }

        let mut out = Vec::new();
        let context = obs.context.as_deref();
        for (i, m) in track_match.iter().enumerate() {
            let t = &mut self.tracks[i];
            match m {
                Some((j, stage)) => {
                    t.record_detection(frame, dets[*j], embs[*j], &self.cfg, context)?;
                    if t.state != TrackState::Tracked {
                        t.set_state(TrackState::Tracked);
                    }
                    match stage {
                        Stage::Fusion => self.stats.stage1_matches += 1,
                        Stage::Iou => self.stats.stage2_matches += 1,
                    }
                    self.stats.total_matches += 1;
                    out.push(TrackOutput {
                        frame,
                        id: t.id,
                        bbox: dets[*j],
                        flag: OutputFlag::Detected,
                    });
                }
                None => {
                    t.last_frame = frame;
                    if t.state == TrackState::New {
                        t.set_state(TrackState::Removed);
                        continue;
                    }
                    t.lost_time = frame - t.last_detection_frame - 1;
                    let kept = if self.cfg.stages.occlusion && t.state == TrackState::Tracked {
                        occlusion_forecast(t, &self.cfg)
                    } else {
                        None
                    };
                    t.lost_time += 1;
                    match kept {
                        Some(b) => {
                            self.stats.forecast_kept += 1;
                            out.push(TrackOutput {
                                frame,
                                id: t.id,
                                bbox: b,
                                flag: OutputFlag::Forecasted,
                            });
                        }
                        None if t.state == TrackState::Tracked => t.set_state(TrackState::Lost),
                        None => {}
                    }
                    if t.lost_time > self.cfg.max_lost {
                        if t.state == TrackState::Tracked {
                            t.set_state(TrackState::Lost);
                        }
                        t.set_state(TrackState::Removed);
                        out.retain(|o| o.id != t.id || o.frame != frame);
                    }
                }
            }
        }

        for (j, taken) in det_taken.iter().enumerate() {
            if *taken {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.stats.tracks_created += 1;
            let state = if first_frame { TrackState::Tracked } else { TrackState::New };
            let mut t = TrackRecord::new(id, frame, dets[j], embs[j].to_vec(), state, self.predictor.build());
            t.predictor.observe_context(context);
            if state == TrackState::Tracked {
                out.push(TrackOutput {
                    frame,
                    id,
                    bbox: dets[j],
                    flag: OutputFlag::Detected,
                });
            }
            self.tracks.push(t);
        }

        let before = self.tracks.len();
        let removed_ids = &mut self.removed_ids;
        self.tracks.retain(|t| {
            if t.state == TrackState::Removed {
                removed_ids.push(t.id);
                false
            } else {
                true
            }
        });
        self.stats.tracks_removed += (before - self.tracks.len()) as u64;

        out.sort_by_key(|o| o.id);
        Ok(out)
    }

    fn associate_fusion(
        &self,
        frame: u32,
        pool: &[usize],
        dets: &[BoundingBox],
        embs: &[&[f64]],
        track_match: &mut [Option<(usize, Stage)>],
        det_taken: &mut [bool],
    ) -> Result<()> {
        let free: Vec<usize> = (0..dets.len()).filter(|&j| !det_taken[j]).collect();
        if pool.is_empty() || free.is_empty() {
            return Ok(());
        }
        let track_embs: Vec<&[f64]> = pool.iter().map(|&i| self.tracks[i].embedding.as_slice()).collect();
        let free_embs: Vec<&[f64]> = free.iter().map(|&j| embs[j]).collect();
        let free_dets: Vec<BoundingBox> = free.iter().map(|&j| dets[j]).collect();
        let reid = cosine_distance(&track_embs, &free_embs)?;
        let cues: Vec<MotionCue<'_>> = pool
            .iter()
            .map(|&i| MotionCue {
                last_box: self.tracks[i].last_box(),
                forecast: self.tracks[i].forecast_from(frame),
            })
            .collect();
        let cost = fuse_motion(&reid, &cues, &free_dets, self.cfg.lambda_fuse, self.cfg.l_fuse)?;
        for (r, c) in solve(&cost, self.cfg.tau_fuse)?.matches {
            track_match[pool[r]] = Some((free[c], Stage::Fusion));
            det_taken[free[c]] = true;
        }
        Ok(())
    }

    fn associate_iou(
        &self,
        frame: u32,
        pool: &[usize],
        dets: &[BoundingBox],
        track_match: &mut [Option<(usize, Stage)>],
        det_taken: &mut [bool],
    ) -> Result<()> {
        let free: Vec<usize> = (0..dets.len()).filter(|&j| !det_taken[j]).collect();
        if pool.is_empty() || free.is_empty() {
            return Ok(());
        }
        // the forecast for this frame when one exists, otherwise the last box
        let boxes: Vec<BoundingBox> = pool
            .iter()
            .map(|&i| {
                let t = &self.tracks[i];
                t.horizon
                    .as_ref()
                    .and_then(|h| h.at_frame(frame).copied())
                    .unwrap_or_else(|| t.last_box())
            })
            .collect();
        let free_dets: Vec<BoundingBox> = free.iter().map(|&j| dets[j]).collect();
        let cost = iou_distance(&boxes, &free_dets);
        for (r, c) in solve(&cost, self.cfg.tau_iou)?.matches {
            track_match[pool[r]] = Some((free[c], Stage::Iou));
            det_taken[free[c]] = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64) -> BoundingBox {
        BoundingBox::new(x, y, 40.0, 80.0)
    }

    fn frame(i: u32, dets: &[BoundingBox], embs: &[Vec<f64>]) -> FrameObservations {
        FrameObservations::new(i, dets.to_vec(), vec![0.9; dets.len()], embs.to_vec(), None).unwrap()
    }

    fn e(k: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[k] = 1.0;
        v
    }

    #[test]
    fn fusion_example_gates_appearance() {
        let dets = [bx(100.0, 100.0), bx(500.0, 500.0)];
        let reid = Matrix::from_rows(&[[0.2, 0.2]]);
        let cue = MotionCue {
            last_box: bx(100.0, 100.0),
            forecast: &[],
        };
        let c = fuse_motion(&reid, &[cue], &dets, 0.75, 10).unwrap();
        assert!((c[(0, 0)] - 0.15).abs() < 1e-12);
        assert!((c[(0, 1)] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn fusion_perfect_overlap_is_pure_appearance() {
        let dets = [bx(0.0, 0.0)];
        let reid = Matrix::from_rows(&[[0.3]]);
        let cue = MotionCue {
            last_box: bx(0.0, 0.0),
            forecast: &[],
        };
        let c = fuse_motion(&reid, &[cue], &dets, 0.75, 10).unwrap();
        assert!((c[(0, 0)] - 0.75 * 0.3).abs() < 1e-12);
        assert!(fuse_motion(&reid, &[], &dets, 0.75, 10).is_err());
    }

    #[test]
    fn fusion_uses_best_forecast_in_window() {
        let dets = [bx(300.0, 300.0), bx(900.0, 900.0)];
        let forecast = [bx(200.0, 200.0), bx(250.0, 250.0), bx(280.0, 280.0), bx(300.0, 300.0)];
        let reid = Matrix::from_rows(&[[0.1, 0.1]]);
        let cue = MotionCue {
            last_box: bx(0.0, 0.0),
            forecast: &forecast,
        };
        let c = fuse_motion(&reid, &[cue.clone()], &dets, 0.75, 10).unwrap();
        assert!((c[(0, 0)] - 0.075).abs() < 1e-12);
        // a window of 3 stops at (280, 280): overlap 20 × 60 of union 5200
        let c = fuse_motion(&reid, &[cue], &dets, 0.75, 3).unwrap();
        let expected = 0.075 + 0.25 * (1.0 - 1200.0 / 5200.0);
        assert!((c[(0, 0)] - expected).abs() < 1e-12);
    }

    fn track_with_horizon(lost_time: u32, hbox: BoundingBox) -> TrackRecord {
        let mut t = TrackRecord::new(1, 1, bx(0.0, 0.0), e(0), TrackState::Tracked, Box::new(CvPredictor::new()));
        t.horizon = Some(ForecastHorizon::new(vec![hbox; 60], 2));
        t.lost_time = lost_time;
        t
    }

    #[test]
    fn occlusion_examples() {
        let cfg = TrackerConfig::default();
        let centre = bx(960.0, 540.0);
        assert_eq!(occlusion_forecast(&track_with_horizon(10, centre), &cfg), Some(centre));
        let corner = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(occlusion_forecast(&track_with_horizon(20, corner), &cfg), None);
        let mut t = track_with_horizon(0, centre);
        t.horizon = None;
        assert_eq!(occlusion_forecast(&t, &cfg), None);
    }

    #[test]
    fn smoothing_examples() {
        let a = e(0);
        let b = e(1);
        assert_eq!(smooth_embedding(&a, &b, 1.0).unwrap(), a);
        assert_eq!(smooth_embedding(&a, &b, 0.0).unwrap(), b);
        assert_eq!(smooth_embedding(&a, &a, 0.9).unwrap(), a);
        let m = smooth_embedding(&a, &b, 0.5).unwrap();
        assert!((crate::matrix::l2_norm(&m) - 1.0).abs() < 1e-12);
        assert!(smooth_embedding(&a, &[-1.0, 0.0, 0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn first_frame_initialises_tracks() {
        let mut tr = Tracker::new(TrackerConfig::default(), PredictorSpec::Cv).unwrap();
        let out = tr
            .step(&frame(1, &[bx(100.0, 100.0), bx(400.0, 100.0), bx(700.0, 100.0)], &[e(0), e(1), e(2)]))
            .unwrap();
        assert_eq!(out.iter().map(|o| o.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(out.iter().all(|o| o.flag == OutputFlag::Detected));
    }

    #[test]
    fn moving_object_keeps_id() {
        let mut tr = Tracker::new(TrackerConfig::default(), PredictorSpec::Cv).unwrap();
        let a = tr.step(&frame(1, &[bx(100.0, 100.0)], &[e(0)])).unwrap();
        let b = tr.step(&frame(2, &[bx(101.0, 100.0)], &[e(0)])).unwrap();
        assert_eq!(a[0].id, b[0].id);
        assert_eq!(tr.stats().total_matches, 1);
    }

    #[test]
    fn occluded_object_is_forecast_and_reacquired() {
        let mut tr = Tracker::new(TrackerConfig::default(), PredictorSpec::Cv).unwrap();
        let pos = |f: u32| bx(300.0 + 5.0 * f as f64, 400.0);
        let mut forecasted = Vec::new();
        let mut ids = Vec::new();
        for f in 1..=20u32 {
            let occluded = (8..13).contains(&f);
            let dets: Vec<_> = if occluded { vec![] } else { vec![pos(f)] };
            let embs: Vec<_> = dets.iter().map(|_| e(0)).collect();
            for o in tr.step(&frame(f, &dets, &embs)).unwrap() {
                ids.push(o.id);
                if o.flag == OutputFlag::Forecasted {
                    forecasted.push(o.frame);
                    assert!((o.bbox.x - pos(f).x).abs() < 1e-9);
                }
            }
        }
        assert_eq!(forecasted, vec![8, 9, 10, 11, 12]);
        assert!(ids.iter().all(|&i| i == 1));
    }

    #[test]
    fn lost_track_is_removed_after_max_lost() {
        let cfg = TrackerConfig {
            stages: StageToggles {
                occlusion: false,
                ..StageToggles::default()
            },
            ..TrackerConfig::default()
        };
        let mut tr = Tracker::new(cfg, PredictorSpec::Cv).unwrap();
        tr.step(&frame(1, &[bx(100.0, 100.0)], &[e(0)])).unwrap();
        tr.step(&frame(2, &[bx(102.0, 100.0)], &[e(0)])).unwrap();
        for f in 3..=32u32 {
            tr.step(&frame(f, &[], &[])).unwrap();
            let t = tr.track(1).unwrap();
            assert_eq!(t.state, TrackState::Lost);
            assert_eq!(t.lost_time, f - 2);
        }
        tr.step(&frame(33, &[], &[])).unwrap();
        assert!(tr.track(1).is_none());
        assert_eq!(tr.removed_ids(), &[1]);
    }

    #[test]
    fn frame_order_and_empty_frames() {
        let mut tr = Tracker::new(TrackerConfig::default(), PredictorSpec::Cv).unwrap();
        tr.step(&frame(3, &[], &[])).unwrap();
        assert!(matches!(tr.step(&frame(3, &[], &[])), Err(Error::FrameOrder { .. })));
        assert!(tr.step(&frame(5, &[], &[])).unwrap().is_empty());
    }

    #[test]
    fn unconfirmed_tracks_are_dropped() {
        let mut tr = Tracker::new(TrackerConfig::default(), PredictorSpec::Cv).unwrap();
        tr.step(&frame(1, &[], &[])).unwrap();
        assert!(tr.step(&frame(2, &[bx(10.0, 10.0)], &[e(0)])).unwrap().is_empty());
        assert_eq!(tr.track(1).unwrap().state, TrackState::New);
        tr.step(&frame(3, &[], &[])).unwrap();
        assert!(tr.track(1).is_none());
        let out = tr.step(&frame(4, &[bx(500.0, 10.0)], &[e(1)])).unwrap();
        assert!(out.is_empty());
        assert_eq!(tr.tracks()[0].id, 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrackerConfig {
            lambda_fuse: 1.5,
            l_fuse: 100,
            ..TrackerConfig::default()
        };
        cfg.stages = StageToggles {
            motion_fusion: false,
            iou: false,
            occlusion: false,
        };
        match cfg.validated() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transitions() {
        use TrackState::*;
        assert!(New.can_become(Tracked));
        assert!(Lost.can_become(Removed));
        assert!(!Removed.can_become(Tracked));
        assert!(!Tracked.can_become(New));
    }
}
