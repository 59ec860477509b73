//! Baseline motion predictors: constant velocity and a constant-velocity
//! Kalman filter over `(x, y, w, h)` and their derivatives.

use nalgebra::{Cholesky, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// `q` forecast boxes; entry `i` predicts frame `origin_frame + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastHorizon {
    pub boxes: Vec<BoundingBox>,
    pub origin_frame: u32,
}

impl ForecastHorizon {
    pub fn new(boxes: Vec<BoundingBox>, origin_frame: u32) -> Self {
        Self {
            boxes,
            origin_frame,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// The forecast for `frame`, if it lies inside the horizon.
    pub fn at_frame(&self, frame: u32) -> Option<&BoundingBox> {
        frame
            .checked_sub(self.origin_frame)
            .and_then(|i| self.boxes.get(i as usize))
    }
}

/// Shared contract of every short-term motion model a track can carry.
///
/// `predict` needs at least two prior observations.
pub trait MotionPredictor: Send {
    fn observe(&mut self, frame: u32, bbox: BoundingBox);

    /// Supplies the whole-frame context vector; ignored by geometric predictors.
    fn observe_context(&mut self, _context: Option<&[f64]>) {}

    fn predict(&self, q: usize) -> Result<ForecastHorizon>;

    fn reset(&mut self);

    fn observations(&self) -> usize;
}

/// Linear extrapolation from the last two boxes.
pub fn cv_predict(history: &[BoundingBox], q: usize) -> Result<ForecastHorizon> {
    let n = history.len();
    if n < 2 {
        return Err(Error::NotReady(format!(
            "constant-velocity forecast needs two boxes, have {n}"
        )));
    }
    let last = history[n - 1];
    let v = last - history[n - 2];
    // running sum, so a learned constant velocity reproduces this bit for bit
    let mut z = v * 0.0;
    let boxes = (0..q)
        .map(|_| {
            z = z + v;
            (last + z).floored()
        })
        .collect();
    Ok(ForecastHorizon::new(boxes, 0))
}

#[derive(Debug, Clone, Default)]
pub struct CvPredictor {
    last: Option<(u32, BoundingBox)>,
    prev: Option<(u32, BoundingBox)>,
    count: usize,
}

impl CvPredictor {
    pub fn new() -> Self {
        Self::default()
    }
}

impl MotionPredictor for CvPredictor {
    fn observe(&mut self, frame: u32, bbox: BoundingBox) {
        self.prev = self.last.take();
        self.last = Some((frame, bbox));
        self.count += 1;
    }

    fn predict(&self, q: usize) -> Result<ForecastHorizon> {
        match (self.prev, self.last) {
            (Some((f0, b0)), Some((f1, b1))) => {
                // spread the displacement over any frames skipped while the track was lost
                let gap = f1.saturating_sub(f0).max(1) as f64;
                let step = (b1 - b0) * (1.0 / gap);
                cv_predict(&[b1 + step * -1.0, b1], q)
            }
            _ => cv_predict(&[], q),
        }
    }

    fn reset(&mut self) {
        *self = Self::default();
    }

    fn observations(&self) -> usize {
        self.count
    }
}

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;

/// Noise model, with every standard deviation expressed as a multiple of the box height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    pub std_position: f64,
    pub std_size: f64,
    pub std_velocity: f64,
    pub std_measurement: f64,
    /// Initial position/size std is `init_position_factor × std_position × h`.
    pub init_position_factor: f64,
    /// Initial velocity std is `init_velocity_factor × std_velocity × h`.
    pub init_velocity_factor: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            std_position: 1.0 / 20.0,
            std_size: 1.0 / 20.0,
            std_velocity: 1.0 / 160.0,
            std_measurement: 1.0 / 20.0,
            init_position_factor: 2.0,
            init_velocity_factor: 10.0,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let fields = [
            ("kalman.std_position", self.std_position),
            ("kalman.std_size", self.std_size),
            ("kalman.std_velocity", self.std_velocity),
            ("kalman.std_measurement", self.std_measurement),
            ("kalman.init_position_factor", self.init_position_factor),
            ("kalman.init_velocity_factor", self.init_velocity_factor),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
    }

    fn scale(h: f64) -> f64 {
        // keeps the noise model non-degenerate for vanishing boxes
        h.abs().max(1e-3)
    }

    fn process_noise(&self, h: f64) -> StateCovariance {
        let s = Self::scale(h);
        let (p, z, v) = (self.std_position * s, self.std_size * s, self.std_velocity * s);
        StateCovariance::from_diagonal(&StateVector::from_column_slice(&[
            p * p,
            p * p,
            z * z,
            z * z,
            v * v,
            v * v,
            v * v,
            v * v,
        ]))
    }

    fn measurement_noise(&self, h: f64) -> SMatrix<f64, 4, 4> {
        let r = self.std_measurement * Self::scale(h);
        SMatrix::<f64, 4, 4>::identity() * (r * r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation_matrix() -> SMatrix<f64, 4, 8> {
    let mut h = SMatrix::<f64, 4, 8>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

pub fn kf_init(bbox: BoundingBox, cfg: &KalmanConfig) -> KalmanState {
    let s = KalmanConfig::scale(bbox.h);
    let p = cfg.init_position_factor * cfg.std_position * s;
    let z = cfg.init_position_factor * cfg.std_size * s;
    let v = cfg.init_velocity_factor * cfg.std_velocity * s;
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<4>(0)
        .copy_from_slice(&bbox.to_array());
    KalmanState {
        mean,
        covariance: StateCovariance::from_diagonal(&StateVector::from_column_slice(&[
            p * p,
            p * p,
            z * z,
            z * z,
            v * v,
            v * v,
            v * v,
            v * v,
        ])),
    }
}

pub fn kf_predict_step(state: &KalmanState, cfg: &KalmanConfig) -> KalmanState {
    let f = transition();
    let mean = f * state.mean;
    let covariance = symmetrize(&(f * state.covariance * f.transpose() + cfg.process_noise(state.mean[3])));
    KalmanState { mean, covariance }
}

pub fn kf_update_step(state: &KalmanState, obs: BoundingBox, cfg: &KalmanConfig) -> Result<KalmanState> {
    if !obs.is_finite() {
        return Err(Error::NonFinite("kalman observation"));
    }
    let h = observation_matrix();
    let innovation_cov = h * state.covariance * h.transpose() + cfg.measurement_noise(state.mean[3]);
    let chol = Cholesky::new(innovation_cov).ok_or(Error::Singular("kalman innovation covariance"))?;
    let ph_t = state.covariance * h.transpose();
    // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let innovation = SVector::<f64, 4>::from_column_slice(&obs.to_array()) - h * state.mean;
    let mean = state.mean + gain * innovation;
    // Joseph form: stays positive semi-definite when the prior spans many orders of magnitude
    let i_kh = StateCovariance::identity() - gain * h;
    let r = cfg.measurement_noise(state.mean[3]);
    let covariance = symmetrize(&(i_kh * state.covariance * i_kh.transpose() + gain * r * gain.transpose()));
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kalman mean"));
    }
    Ok(KalmanState { mean, covariance })
}

pub fn kf_forecast(state: &KalmanState, q: usize, cfg: &KalmanConfig) -> ForecastHorizon {
    let mut s = state.clone();
    let mut boxes = Vec::with_capacity(q);
    for _ in 0..q {
        s = kf_predict_step(&s, cfg);
        boxes.push(s.bbox().floored());
    }
    ForecastHorizon::new(boxes, 0)
}

#[derive(Debug, Clone)]
pub struct KalmanPredictor {
    cfg: KalmanConfig,
    state: Option<(u32, KalmanState)>,
    count: usize,
}

impl KalmanPredictor {
    pub fn new(cfg: KalmanConfig) -> Self {
        Self {
            cfg,
            state: None,
            count: 0,
        }
    }

    pub fn state(&self) -> Option<&KalmanState> {
        self.state.as_ref().map(|(_, s)| s)
    }
}

impl MotionPredictor for KalmanPredictor {
    fn observe(&mut self, frame: u32, bbox: BoundingBox) {
        let next = match self.state.take() {
            None => kf_init(bbox, &self.cfg),
            Some((last_frame, mut s)) => {
                for _ in 0..frame.saturating_sub(last_frame).max(1) {
                    s = kf_predict_step(&s, &self.cfg);
                }
                match kf_update_step(&s, bbox, &self.cfg) {
                    Ok(updated) => updated,
                    Err(e) => {
                        log::warn!("kalman update failed ({e}); re-initialising");
                        kf_init(bbox, &self.cfg)
                    }
                }
            }
        };
        self.state = Some((frame, next));
        self.count += 1;
    }

    fn predict(&self, q: usize) -> Result<ForecastHorizon> {
        match &self.state {
            Some((_, s)) if self.count >= 2 => Ok(kf_forecast(s, q, &self.cfg)),
            _ => Err(Error::NotReady(format!(
                "kalman forecast needs two observations, have {}",
                self.count
            ))),
        }
    }

    fn reset(&mut self) {
        self.state = None;
        self.count = 0;
    }

    fn observations(&self) -> usize {
        self.count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    fn quiet() -> KalmanConfig {
        KalmanConfig {
            std_position: 1e-6,
            std_size: 1e-6,
            std_velocity: 1e-6,
            std_measurement: 1e-9,
            init_position_factor: 2.0,
            // diffuse velocity prior: the track's speed is unknown at birth
            init_velocity_factor: 1e8,
        }
    }

    #[test]
    fn cv_examples() {
        let h = cv_predict(&[b(0.0, 0.0, 2.0, 2.0), b(1.0, 0.0, 2.0, 2.0)], 3).unwrap();
        assert_eq!(
            h.boxes,
            vec![b(2.0, 0.0, 2.0, 2.0), b(3.0, 0.0, 2.0, 2.0), b(4.0, 0.0, 2.0, 2.0)]
        );
        let still = b(5.0, 5.0, 3.0, 3.0);
        assert_eq!(cv_predict(&[still, still], 2).unwrap().boxes, vec![still; 2]);
        assert!(matches!(cv_predict(&[still], 2), Err(Error::NotReady(_))));
    }

    #[test]
    fn cv_floors_extent() {
        let h = cv_predict(&[b(0.0, 0.0, 3.0, 3.0), b(0.0, 0.0, 1.0, 1.0)], 2).unwrap();
        assert!(h.boxes.iter().all(|bx| bx.w > 0.0 && bx.h > 0.0));
    }

    #[test]
    fn kf_init_example() {
        let s = kf_init(b(10.0, 10.0, 4.0, 8.0), &KalmanConfig::default());
        assert_eq!(s.mean.as_slice(), &[10.0, 10.0, 4.0, 8.0, 0.0, 0.0, 0.0, 0.0]);
        for r in 0..8 {
            for c in 0..8 {
                if r != c {
                    assert_eq!(s.covariance[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn kf_predict_example() {
        let cfg = KalmanConfig::default();
        let mut s = kf_init(b(0.0, 0.0, 2.0, 2.0), &cfg);
        s.mean[4] = 1.0;
        let next = kf_predict_step(&s, &cfg);
        assert_eq!(next.mean.as_slice(), &[1.0, 0.0, 2.0, 2.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(next.covariance.trace() > s.covariance.trace());

        let still = kf_init(b(3.0, 4.0, 2.0, 2.0), &cfg);
        assert_eq!(kf_predict_step(&still, &cfg).bbox(), still.bbox());
    }

    #[test]
    fn kf_update_exact_observation() {
        let cfg = quiet();
        let s = kf_predict_step(&kf_init(b(0.0, 0.0, 2.0, 2.0), &cfg), &cfg);
        let obs = b(0.0, 0.0, 2.0, 2.0);
        let post = kf_update_step(&s, obs, &cfg).unwrap();
        for (a, e) in post.bbox().to_array().iter().zip(obs.to_array()) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn kf_update_shrinks_measured_block() {
        let cfg = KalmanConfig::default();
        let prior = kf_predict_step(&kf_init(b(50.0, 50.0, 20.0, 40.0), &cfg), &cfg);
        let post = kf_update_step(&prior, b(51.0, 50.0, 20.0, 40.0), &cfg).unwrap();
        let block = |p: &StateCovariance| (0..4).map(|i| p[(i, i)]).sum::<f64>();
        assert!(block(&post.covariance) < block(&prior.covariance));
    }

    #[test]
    fn kf_singular_innovation_is_error() {
        let cfg = KalmanConfig::default();
        let mut s = kf_init(b(0.0, 0.0, 2.0, 2.0), &cfg);
        s.covariance = StateCovariance::from_element(f64::NAN);
        assert!(kf_update_step(&s, b(0.0, 0.0, 2.0, 2.0), &cfg).is_err());
    }

    #[test]
    fn kf_noise_free_linear_track() {
        let cfg = quiet();
        let truth = |t: f64| b(10.0 + 3.0 * t, 20.0 - 1.5 * t, 40.0, 80.0);
        let mut s = kf_init(truth(0.0), &cfg);
        for t in 1..=5 {
            s = kf_update_step(&kf_predict_step(&s, &cfg), truth(t as f64), &cfg).unwrap();
        }
        let next = kf_predict_step(&s, &cfg).bbox();
        assert!(next.centroid_distance(&truth(6.0)) < 1e-6);
        let horizon = kf_forecast(&s, 10, &cfg);
        let ade: f64 = horizon
            .boxes
            .iter()
            .enumerate()
            .map(|(i, bx)| bx.centroid_distance(&truth(6.0 + i as f64)))
            .sum::<f64>()
            / 10.0;
        assert!(ade < 1e-3);
    }

    #[test]
    fn kf_forecast_examples() {
        let cfg = KalmanConfig::default();
        let s = kf_init(b(1.0, 2.0, 3.0, 4.0), &cfg);
        let h = kf_forecast(&s, 4, &cfg);
        assert_eq!(h.len(), 4);
        assert!(h.boxes.iter().all(|bx| *bx == s.bbox()));

        let mut moving = s.clone();
        moving.mean[4] = 1.0;
        let xs: Vec<f64> = kf_forecast(&moving, 3, &cfg).boxes.iter().map(|bx| bx.x).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn predictors_reject_early_predict() {
        let mut preds: Vec<Box<dyn MotionPredictor>> = vec![
            Box::new(CvPredictor::new()),
            Box::new(KalmanPredictor::new(KalmanConfig::default())),
        ];
        for p in preds.iter_mut() {
            assert!(p.predict(3).is_err());
            p.observe(1, b(0.0, 0.0, 2.0, 2.0));
            assert!(p.predict(3).is_err());
            p.observe(2, b(1.0, 0.0, 2.0, 2.0));
            assert_eq!(p.predict(3).unwrap().len(), 3);
            p.reset();
            assert!(p.predict(3).is_err());
        }
    }

    #[test]
    fn cv_predictor_handles_frame_gaps() {
        let mut p = CvPredictor::new();
        p.observe(1, b(0.0, 0.0, 2.0, 2.0));
        p.observe(3, b(4.0, 0.0, 2.0, 2.0));
        assert_eq!(p.predict(1).unwrap().boxes[0].x, 6.0);
    }

    #[test]
    fn covariance_stays_spd() {
        let cfg = KalmanConfig::default();
        // deterministic pseudo-random walk via an LCG; no rng dependency needed here
        let mut seed = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut s = kf_init(b(100.0, 100.0, 30.0, 60.0), &cfg);
        for _ in 0..10_000 {
            s = kf_predict_step(&s, &cfg);
            let obs = b(
                s.mean[0] + 10.0 * (next() - 0.5),
                s.mean[1] + 10.0 * (next() - 0.5),
                (30.0 + 4.0 * (next() - 0.5)).max(1.0),
                (60.0 + 4.0 * (next() - 0.5)).max(1.0),
            );
            s = kf_update_step(&s, obs, &cfg).unwrap();
            let asym = (s.covariance - s.covariance.transpose()).abs().max();
            assert!(asym <= 1e-9);
            assert!(Cholesky::new(s.covariance).is_some());
        }
    }
}
