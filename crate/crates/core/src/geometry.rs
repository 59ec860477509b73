//! Box algebra and distance functions shared by every other module.
//!
//! Boxes are centroid-form `(x, y, w, h)` throughout; the top-left form only
//! appears at the MOTChallenge file boundary (see [`crate::io`]).

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};

/// Smallest width/height an extrapolated box may take.
pub const MIN_EXTENT: f64 = 1e-3;

/// Centroid-form bounding box in pixels.
///
/// The all-zero box is the padding sentinel used by fixed-width past
/// windows; it has zero area, so it never overlaps anything.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const ZERO: BoundingBox = BoundingBox {
        x: 0.0,
        y: 0.0,
        w: 0.0,
        h: 0.0,
    };

    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_top_left(left: f64, top: f64, w: f64, h: f64) -> Self {
        Self {
            x: left + w / 2.0,
            y: top + h / 2.0,
            w,
            h,
        }
    }

    /// `(left, top, w, h)`
    pub fn to_top_left(&self) -> (f64, f64, f64, f64) {
        (self.x - self.w / 2.0, self.y - self.h / 2.0, self.w, self.h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.is_finite()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Clamp width and height to at least [`MIN_EXTENT`].
    pub fn floored(self) -> Self {
        Self {
            w: self.w.max(MIN_EXTENT),
            h: self.h.max(MIN_EXTENT),
            ..self
        }
    }

    pub fn displaced(self, v: Velocity) -> Self {
        self + v
    }

    pub fn centroid_distance(&self, other: &BoundingBox) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Per-frame change of a box, `(Δx, Δy, Δw, Δh)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Velocity {
    pub const ZERO: Velocity = Velocity {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub const fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl Add<Velocity> for BoundingBox {
    type Output = BoundingBox;

    fn add(self, v: Velocity) -> BoundingBox {
        BoundingBox::new(self.x + v.dx, self.y + v.dy, self.w + v.dw, self.h + v.dh)
    }
}

impl Sub for BoundingBox {
    type Output = Velocity;

    fn sub(self, o: BoundingBox) -> Velocity {
        Velocity::new(self.x - o.x, self.y - o.y, self.w - o.w, self.h - o.h)
    }
}

impl Add for Velocity {
    type Output = Velocity;

    fn add(self, o: Velocity) -> Velocity {
        Velocity::new(self.dx + o.dx, self.dy + o.dy, self.dw + o.dw, self.dh + o.dh)
    }
}

impl Mul<f64> for Velocity {
    type Output = Velocity;

    fn mul(self, k: f64) -> Velocity {
        Velocity::new(self.dx * k, self.dy * k, self.dw * k, self.dh * k)
    }
}

/// A box together with its velocity: the 8-wide per-step encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxWithVelocity {
    pub bbox: BoundingBox,
    pub vel: Velocity,
}

impl BoxWithVelocity {
    pub const ZERO: BoxWithVelocity = BoxWithVelocity {
        bbox: BoundingBox::ZERO,
        vel: Velocity::ZERO,
    };

    pub fn to_array(&self) -> [f64; 8] {
        let b = self.bbox;
        let v = self.vel;
        [b.x, b.y, b.w, b.h, v.dx, v.dy, v.dw, v.dh]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            bbox: BoundingBox::new(a[0], a[1], a[2], a[3]),
            vel: Velocity::new(a[4], a[5], a[6], a[7]),
        }
    }
}

/// Detector output for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameObservations {
    pub frame_index: u32,
    pub detections: Vec<BoundingBox>,
    pub confidences: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    pub context: Option<Vec<f64>>,
}

impl FrameObservations {
    /// Builds a frame, checking the parallel sequences and L2-normalizing
    /// every embedding.
    pub fn new(
        frame_index: u32,
        detections: Vec<BoundingBox>,
        confidences: Vec<f64>,
        embeddings: Vec<Vec<f64>>,
        context: Option<Vec<f64>>,
    ) -> Result<Self> {
        if confidences.len() != detections.len() {
            return Err(Error::DimensionMismatch {
                context: "frame confidences",
                expected: detections.len(),
                actual: confidences.len(),
            });
        }
        if embeddings.len() != detections.len() {
            return Err(Error::DimensionMismatch {
                context: "frame embeddings",
                expected: detections.len(),
                actual: embeddings.len(),
            });
        }
        if let Some(first) = embeddings.first() {
            let dim = first.len();
            if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
                return Err(Error::DimensionMismatch {
                    context: "frame embedding width",
                    expected: dim,
                    actual: bad.len(),
                });
            }
        }
        let embeddings = embeddings
            .into_iter()
            .map(normalized)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frame_index,
            detections,
            confidences,
            embeddings,
            context,
        })
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Returns `v / ‖v‖`; zero or non-finite vectors are rejected.
pub fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = l2_norm(&v);
    if !n.is_finite() {
        return Err(Error::NonFinite("embedding"));
    }
    if n == 0.0 {
        return Err(Error::Empty("zero-norm embedding"));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Intersection over union. Degenerate boxes (non-positive extent) score 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if !(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0) {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let ix = ((a.x + a.w / 2.0).min(b.x + b.w / 2.0) - (a.x - a.w / 2.0).max(b.x - b.w / 2.0)).max(0.0);
    let iy = ((a.y + a.h / 2.0).min(b.y + b.h / 2.0) - (a.y - a.h / 2.0).max(b.y - b.h / 2.0)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// `1 − iou` for every (track, detection) pair.
pub fn iou_distance(tracks: &[BoundingBox], dets: &[BoundingBox]) -> Matrix {
    let mut m = Matrix::zeros(tracks.len(), dets.len());
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            m[(i, j)] = 1.0 - iou(t, d);
        }
    }
    m
}

/// `1 − cos(θ)` for every (track, detection) pair, clamped to `[0, 2]`.
pub fn cosine_distance<T, D>(track_embs: &[T], det_embs: &[D]) -> Result<Matrix>
where
    T: AsRef<[f64]>,
    D: AsRef<[f64]>,
{
    let dim = track_embs
        .first()
        .map(|v| v.as_ref().len())
        .or_else(|| det_embs.first().map(|v| v.as_ref().len()))
        .unwrap_or(0);
    let norms = |vs: &[&[f64]]| -> Result<Vec<f64>> {
        vs.iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "embedding",
                        expected: dim,
                        actual: v.len(),
                    });
                }
                let n = l2_norm(v);
                if !n.is_finite() || n == 0.0 {
                    return Err(Error::NonFinite("embedding norm"));
                }
                Ok(n)
            })
            .collect()
    };
    let ts: Vec<&[f64]> = track_embs.iter().map(AsRef::as_ref).collect();
    let ds: Vec<&[f64]> = det_embs.iter().map(AsRef::as_ref).collect();
    let tn = norms(&ts)?;
    let dn = norms(&ds)?;
    let mut m = Matrix::zeros(ts.len(), ds.len());
    for (i, t) in ts.iter().enumerate() {
        for (j, d) in ds.iter().enumerate() {
            let cos = dot(t, d) / (tn[i] * dn[j]);
            m[(i, j)] = (1.0 - cos).clamp(0.0, 2.0);
        }
    }
    Ok(m)
}

/// Per-step velocities; the first entry has no predecessor and is zero.
pub fn velocities_from_boxes(boxes: &[BoundingBox]) -> Vec<Velocity> {
    let mut out = Vec::with_capacity(boxes.len());
    if let Some(first) = boxes.first() {
        out.push(Velocity::ZERO);
        let mut prev = *first;
        for b in &boxes[1..] {
            out.push(*b - prev);
            prev = *b;
        }
    }
    out
}

/// Pairs each box with its velocity.
pub fn with_velocities(boxes: &[BoundingBox]) -> Vec<BoxWithVelocity> {
    boxes
        .iter()
        .zip(velocities_from_boxes(boxes))
        .map(|(b, v)| BoxWithVelocity { bbox: *b, vel: v })
        .collect()
}

/// Centroid distance to the frame centre over half the frame diagonal, in `[0, 1]`.
pub fn center_distance_normalized(b: &BoundingBox, frame_w: f64, frame_h: f64) -> f64 {
    let half_diag = 0.5 * frame_w.hypot(frame_h);
    let d = (b.x - frame_w / 2.0).hypot(b.y - frame_h / 2.0);
    (d / half_diag).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn iou_examples() {
        let a = BoundingBox::new(5.0, 5.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &BoundingBox::new(10.0, 10.0, 2.0, 2.0)), 0.0);
        // intersection 1x2 = 2, union 4 + 4 - 2 = 6
        assert!(close(iou(&a, &BoundingBox::new(1.0, 0.0, 2.0, 2.0)), 1.0 / 3.0));
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &BoundingBox::ZERO), 0.0);
        assert_eq!(iou(&BoundingBox::ZERO, &BoundingBox::ZERO), 0.0);
        assert_eq!(iou(&a, &BoundingBox::new(0.0, 0.0, -1.0, 2.0)), 0.0);
    }

    #[test]
    fn iou_distance_examples() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou_distance(&[a], &[a]).as_slice(), &[0.0]);
        assert_eq!(
            iou_distance(&[a], &[BoundingBox::new(10.0, 10.0, 2.0, 2.0)]).as_slice(),
            &[1.0]
        );
        let d = iou_distance(&[a], &[BoundingBox::new(1.0, 0.0, 2.0, 2.0)]);
        assert!(close(d[(0, 0)], 2.0 / 3.0));
        let e = iou_distance(&[], &[a]);
        assert_eq!((e.rows(), e.cols()), (0, 1));
    }

    #[test]
    fn cosine_examples() {
        let m = cosine_distance(&[vec![1.0, 0.0]], &[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        assert_eq!(m.row(0), &[0.0, 2.0, 1.0]);
        assert!(matches!(
            cosine_distance(&[vec![1.0, 0.0]], &[vec![1.0, 0.0, 0.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn velocity_examples() {
        let b0 = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        let b1 = BoundingBox::new(1.0, 1.0, 2.0, 2.0);
        assert_eq!(
            velocities_from_boxes(&[b0, b1]),
            vec![Velocity::ZERO, Velocity::new(1.0, 1.0, 0.0, 0.0)]
        );
        assert_eq!(velocities_from_boxes(&[b0]), vec![Velocity::ZERO]);
        assert_eq!(velocities_from_boxes(&[b0, b0]), vec![Velocity::ZERO; 2]);
        assert!(velocities_from_boxes(&[]).is_empty());
    }

    #[test]
    fn center_distance_examples() {
        let at = |x, y| BoundingBox::new(x, y, 4.0, 4.0);
        assert_eq!(center_distance_normalized(&at(50.0, 50.0), 100.0, 100.0), 0.0);
        assert!(close(center_distance_normalized(&at(0.0, 0.0), 100.0, 100.0), 1.0));
        let expected = 25.0 / (50.0 * 2f64.sqrt());
        assert!(close(center_distance_normalized(&at(75.0, 50.0), 100.0, 100.0), expected));
    }

    #[test]
    fn frame_observations_normalize_and_check() {
        let b = BoundingBox::new(1.0, 1.0, 1.0, 1.0);
        let f = FrameObservations::new(1, vec![b], vec![0.9], vec![vec![2.0, 0.0]], None).unwrap();
        assert_eq!(f.embeddings[0], vec![1.0, 0.0]);
        assert!(FrameObservations::new(1, vec![b], vec![], vec![vec![1.0]], None).is_err());
    }

    #[test]
    fn top_left_round_trip() {
        let b = BoundingBox::from_top_left(100.0, 150.0, 20.0, 40.0);
        assert_eq!(b, BoundingBox::new(110.0, 170.0, 20.0, 40.0));
        assert_eq!(b.to_top_left(), (100.0, 150.0, 20.0, 40.0));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.1..50.0f64, 0.1..50.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn velocities_invert_by_cumulative_sum(boxes in prop::collection::vec(
            (-1000i32..1000, -1000i32..1000, 1i32..200, 1i32..200), 1..20)) {
            // integer-valued pixels keep the re-summation exact
            let boxes: Vec<_> = boxes.into_iter()
                .map(|(x, y, w, h)| BoundingBox::new(x as f64, y as f64, w as f64, h as f64))
                .collect();
            let vels = velocities_from_boxes(&boxes);
            let mut acc = boxes[0];
            let mut rebuilt = vec![acc];
            for v in &vels[1..] {
                acc = acc + *v;
                rebuilt.push(acc);
            }
            prop_assert_eq!(rebuilt, boxes);
        }

        #[test]
        fn cosine_scale_invariant(
            v in prop::collection::vec(-1.0..1.0f64, 4),
            u in prop::collection::vec(-1.0..1.0f64, 4),
            k in 0.01..100.0f64,
        ) {
            prop_assume!(l2_norm(&v) > 1e-3 && l2_norm(&u) > 1e-3);
            let self_d = cosine_distance(&[&v[..]], &[&v[..]]).unwrap()[(0, 0)];
            prop_assert!(self_d.abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * k).collect();
            let d1 = cosine_distance(&[&v[..]], &[&u[..]]).unwrap()[(0, 0)];
            let d2 = cosine_distance(&[&v[..]], &[&scaled[..]]).unwrap()[(0, 0)];
            prop_assert!((d1 - d2).abs() < 1e-12);
        }
    }
}
