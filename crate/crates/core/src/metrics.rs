//! Tracking and forecasting metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::assignment::solve;
use crate::association::PredictorSpec;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::io::MotSequence;
use crate::matrix::Matrix;
use crate::motion::ForecastHorizon;

pub const DEFAULT_IOU_MATCH_THRESH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub mota: f64,
    /// Mean IOU over matched pairs (1 when nothing matched).
    pub motp: f64,
    pub idf1: f64,
    pub id_switches: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub mt: usize,
    pub ml: usize,
    pub gt_count: usize,
    pub hyp_count: usize,
    pub matches: usize,
    pub gt_tracks: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl TrackingReport {
    pub const CSV_HEADER: &'static str = "mota,motp,idf1,id_switches,fp,fn,mt,ml,gt_count,hyp_count,matches,gt_tracks";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{},{},{},{},{},{},{},{},{}",
            self.mota,
            self.motp,
            self.idf1,
            self.id_switches,
            self.fp,
            self.fn_,
            self.mt,
            self.ml,
            self.gt_count,
            self.hyp_count,
            self.matches,
            self.gt_tracks
        )
    }

    /// `mota` recomputed from the counts.
    pub fn mota_from_counts(&self) -> f64 {
        if self.gt_count == 0 {
            return if self.fp + self.id_switches == 0 { 1.0 } else { f64::NEG_INFINITY };
        }
        1.0 - (self.fn_ + self.fp + self.id_switches) as f64 / self.gt_count as f64
    }
}

fn check_aligned(gt: &MotSequence, hyp: &MotSequence) -> Result<()> {
    if let (Some(g), Some(h)) = (gt.last_frame(), hyp.last_frame()) {
        if h > g {
            return Err(Error::Validation(vec![format!(
                "hypothesis frame {h} lies beyond the last ground-truth frame {g}"
            )]));
        }
    }
    Ok(())
}

/// Largest cost still admissible for an IOU threshold.
fn iou_gate(thresh: f64) -> f64 {
    1.0 - thresh + 1e-12
}

/// CLEAR-MOT counts plus IDF1.
///
/// Per frame, correspondences from the previous frame are kept while their
/// IOU stays at or above `iou_thresh`; the remaining pairs are assigned by
/// Hungarian on `1 − IOU`. An ID switch is a ground-truth id matched to a
/// hypothesis id other than its most recent one.
pub fn clear_mot(gt: &MotSequence, hyp: &MotSequence, iou_thresh: f64) -> Result<TrackingReport> {
    check_aligned(gt, hyp)?;
    let mut last_match: HashMap<i64, i64> = HashMap::new();
    let mut covered: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut matches) = (0, 0, 0, 0);
    let mut iou_sum = 0.0;

    let frames: std::collections::BTreeSet<u32> = gt.frames().keys().chain(hyp.frames().keys()).copied().collect();
    for f in frames {
        let g = gt.frame(f);
        let h = hyp.frame(f);
        for r in g {
            covered.entry(r.id).or_default().1 += 1;
        }
        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        let mut pairs = Vec::new();
        for (gi, gr) in g.iter().enumerate() {
            let Some(&hid) = last_match.get(&gr.id) else { continue };
            if let Some(hi) = h.iter().position(|hr| hr.id == hid) {
                if !h_used[hi] && iou(&gr.bbox, &h[hi].bbox) >= iou_thresh {
                    g_used[gi] = true;
                    h_used[hi] = true;
                    pairs.push((gi, hi));
                }
            }
        }
        let g_rest: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let h_rest: Vec<usize> = (0..h.len()).filter(|&i| !h_used[i]).collect();
        if !g_rest.is_empty() && !h_rest.is_empty() {
            let mut cost = Matrix::zeros(g_rest.len(), h_rest.len());
            for (a, &gi) in g_rest.iter().enumerate() {
                for (b, &hi) in h_rest.iter().enumerate() {
                    cost[(a, b)] = 1.0 - iou(&g[gi].bbox, &h[hi].bbox);
                }
            }
            for (a, b) in solve(&cost, iou_gate(iou_thresh))?.matches {
                pairs.push((g_rest[a], h_rest[b]));
            }
        }
        for &(gi, hi) in &pairs {
            let (gid, hid) = (g[gi].id, h[hi].id);
            if last_match.get(&gid).is_some_and(|&prev| prev != hid) {
                ids += 1;
            }
            last_match.insert(gid, hid);
            covered.entry(gid).or_default().0 += 1;
            iou_sum += iou(&g[gi].bbox, &h[hi].bbox);
        }
        matches += pairs.len();
        fn_ += g.len() - pairs.len();
        fp += h.len() - pairs.len();
    }

    let mt = covered.values().filter(|(m, n)| *m as f64 >= 0.8 * *n as f64).count();
    let ml = covered.values().filter(|(m, n)| (*m as f64) <= 0.2 * *n as f64).count();
    let (idtp, idfp, idfn, idf1) = identity_scores(gt, hyp, iou_thresh)?;
    let mut report = TrackingReport {
        mota: 0.0,
        motp: if matches == 0 { 1.0 } else { iou_sum / matches as f64 },
        idf1,
        id_switches: ids,
        fp,
        fn_,
        mt,
        ml,
        gt_count: gt.len(),
        hyp_count: hyp.len(),
        matches,
        gt_tracks: covered.len(),
        idtp,
        idfp,
        idfn,
    };
    report.mota = report.mota_from_counts();
    Ok(report)
}

/// `(IDTP, IDFP, IDFN, IDF1)` from the best one-to-one trajectory matching.
pub fn identity_scores(gt: &MotSequence, hyp: &MotSequence, iou_thresh: f64) -> Result<(usize, usize, usize, f64)> {
    check_aligned(gt, hyp)?;
    let g_ids: Vec<i64> = gt.tracks().into_keys().collect();
    let h_ids: Vec<i64> = hyp.tracks().into_keys().collect();
    let g_index: HashMap<i64, usize> = g_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let h_index: HashMap<i64, usize> = h_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut overlap = Matrix::zeros(g_ids.len(), h_ids.len());
    for (f, g) in gt.frames() {
        // A pair counts once per frame even if an id repeats within the frame.
        let mut hit = std::collections::HashSet::new();
        for hr in hyp.frame(*f) {
            for gr in g {
                if iou(&gr.bbox, &hr.bbox) >= iou_thresh {
                    hit.insert((g_index[&gr.id], h_index[&hr.id]));
                }
            }
        }
        for (a, b) in hit {
            overlap[(a, b)] += 1.0;
        }
    }
    let idtp = if g_ids.is_empty() || h_ids.is_empty() {
        0
    } else {
        let mut cost = overlap.clone();
        cost.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        let r = solve(&cost, f64::INFINITY)?;
        r.matches.iter().map(|&(a, b)| overlap[(a, b)] as usize).sum()
    };
    let (ng, nh) = (gt.len(), hyp.len());
    let idf1 = if ng + nh == 0 { 1.0 } else { 2.0 * idtp as f64 / (ng + nh) as f64 };
    Ok((idtp, nh - idtp, ng - idtp, idf1))
}

pub fn idf1(gt: &MotSequence, hyp: &MotSequence, iou_thresh: f64) -> Result<f64> {
    identity_scores(gt, hyp, iou_thresh).map(|s| s.3)
}

fn check_horizon(pred: &ForecastHorizon, gt_future: &[BoundingBox], valid_len: usize) -> Result<()> {
    if valid_len == 0 {
        return Err(Error::Empty("forecast valid prefix"));
    }
    let have = pred.len().min(gt_future.len());
    if valid_len > have {
        return Err(Error::DimensionMismatch {
            context: "forecast valid prefix",
            expected: have,
            actual: valid_len,
        });
    }
    Ok(())
}

/// Mean and final centroid error over the valid prefix.
pub fn displacement(pred: &ForecastHorizon, gt_future: &[BoundingBox], valid_len: usize) -> Result<(f64, f64)> {
    check_horizon(pred, gt_future, valid_len)?;
    let errs: Vec<f64> = (0..valid_len)
        .map(|k| pred.boxes[k].centroid_distance(&gt_future[k]))
        .collect();
    Ok((errs.iter().sum::<f64>() / valid_len as f64, errs[valid_len - 1]))
}

/// Mean and final IOU over the valid prefix.
pub fn overlap_scores(pred: &ForecastHorizon, gt_future: &[BoundingBox], valid_len: usize) -> Result<(f64, f64)> {
    check_horizon(pred, gt_future, valid_len)?;
    let ious: Vec<f64> = (0..valid_len).map(|k| iou(&pred.boxes[k], &gt_future[k])).collect();
    Ok((ious.iter().sum::<f64>() / valid_len as f64, ious[valid_len - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub ade: f64,
    pub fde: f64,
    pub aiou: f64,
    pub fiou: f64,
    pub weight: f64,
}

impl ForecastSample {
    pub fn score(pred: &ForecastHorizon, gt_future: &[BoundingBox], valid_len: usize) -> Result<Self> {
        let (ade, fde) = displacement(pred, gt_future, valid_len)?;
        let (aiou, fiou) = overlap_scores(pred, gt_future, valid_len)?;
        Ok(Self {
            ade,
            fde,
            aiou,
            fiou,
            weight: 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub ade: f64,
    pub fde: f64,
    pub aiou: f64,
    pub fiou: f64,
    pub horizon: usize,
    pub sample_count: usize,
}

impl ForecastReport {
    pub const CSV_HEADER: &'static str = "ade,fde,aiou,fiou,horizon,sample_count";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{},{}",
            self.ade, self.fde, self.aiou, self.fiou, self.horizon, self.sample_count
        )
    }
}

/// Weighted means over samples.
pub fn aggregate_forecast(samples: &[ForecastSample], horizon: usize) -> Result<ForecastReport> {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if samples.is_empty() || !(total > 0.0) {
        return Err(Error::Empty("forecast samples"));
    }
    let mean = |f: fn(&ForecastSample) -> f64| samples.iter().map(|s| s.weight * f(s)).sum::<f64>() / total;
    Ok(ForecastReport {
        ade: mean(|s| s.ade),
        fde: mean(|s| s.fde),
        aiou: mean(|s| s.aiou),
        fiou: mean(|s| s.fiou),
        horizon,
        sample_count: samples.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastEvalConfig {
    pub q: usize,
    /// Only anchors with a full `q`-step future.
    pub strict: bool,
    /// Minimum boxes observed before the first anchor.
    pub min_past: usize,
    /// Evaluate every `stride`-th anchor of each track.
    pub stride: usize,
}

impl Default for ForecastEvalConfig {
    fn default() -> Self {
        Self {
            q: 60,
            strict: true,
            min_past: 2,
            stride: 1,
        }
    }
}

/// Per-anchor samples for one predictor over all ground-truth tracks.
///
/// Each track is replayed through a fresh predictor; after observing the box
/// at frame `t`, the forecast for `t+1..` is scored against the consecutive
/// ground-truth boxes that follow.
pub fn forecast_samples(
    gt: &MotSequence,
    predictor: &PredictorSpec,
    cfg: &ForecastEvalConfig,
    context: &dyn Fn(u32) -> Option<Vec<f64>>,
) -> Result<Vec<ForecastSample>> {
    if cfg.q == 0 || cfg.stride == 0 {
        return Err(Error::Validation(vec!["forecast eval needs q > 0 and stride > 0".into()]));
    }
    let mut out = Vec::new();
    for (_, track) in gt.tracks() {
        let mut p = predictor.build();
        for (i, &(frame, bbox)) in track.iter().enumerate() {
            p.observe_context(context(frame).as_deref());
            p.observe(frame, bbox);
            let seen = i + 1;
            if seen < cfg.min_past.max(1) || (seen - cfg.min_past.max(1)) % cfg.stride != 0 {
                continue;
            }
            let future: Vec<BoundingBox> = track[i + 1..]
                .iter()
                .zip(1..)
                .take_while(|((f, _), k)| *f == frame + k)
                .take(cfg.q)
                .map(|((_, b), _)| *b)
                .collect();
            if future.is_empty() || (cfg.strict && future.len() < cfg.q) {
                continue;
            }
            let horizon = p.predict(cfg.q)?;
            out.push(ForecastSample::score(&horizon, &future, future.len())?);
        }
    }
    Ok(out)
}

pub fn evaluate_forecasts(
    gt: &MotSequence,
    predictor: &PredictorSpec,
    cfg: &ForecastEvalConfig,
    context: &dyn Fn(u32) -> Option<Vec<f64>>,
) -> Result<ForecastReport> {
    aggregate_forecast(&forecast_samples(gt, predictor, cfg, context)?, cfg.q)
}
