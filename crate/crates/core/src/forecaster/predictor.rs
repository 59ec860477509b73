use std::collections::VecDeque;
use std::sync::Arc;

use super::model::{forecast, ForecasterParams};
use super::{ContextSource, PastSequence};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::motion::{ForecastHorizon, MotionPredictor};

/// Per-track adapter around shared trained weights.
#[derive(Debug, Clone)]
pub struct LearnedPredictor {
    params: Arc<ForecasterParams>,
    history: VecDeque<BoundingBox>,
    context: Vec<f64>,
    count: usize,
}

impl LearnedPredictor {
    pub fn new(params: Arc<ForecasterParams>) -> Self {
        Self {
            params,
            history: VecDeque::new(),
            context: Vec::new(),
            count: 0,
        }
    }

    pub fn params(&self) -> &Arc<ForecasterParams> {
        &self.params
    }
}

impl MotionPredictor for LearnedPredictor {
    fn observe(&mut self, _frame: u32, bbox: BoundingBox) {
        // one extra box so the oldest windowed step still has a velocity
        if self.history.len() > self.params.config.p {
            self.history.pop_front();
        }
        self.history.push_back(bbox);
        self.count += 1;
    }

    /// Ignored unless the model was configured with scene context.
    fn observe_context(&mut self, context: Option<&[f64]>) {
        self.context = match self.params.config.context {
            ContextSource::Scene => context.map(<[f64]>::to_vec).unwrap_or_default(),
            ContextSource::Zero => Vec::new(),
        };
    }

    /// Model horizons shorter than `q` are extended at the last predicted velocity.
    fn predict(&self, q: usize) -> Result<ForecastHorizon> {
        if self.history.len() < 2 {
            return Err(Error::NotReady(format!(
                "learned forecast needs two boxes, have {}",
                self.history.len()
            )));
        }
        let boxes: Vec<BoundingBox> = self.history.iter().copied().collect();
        let past = PastSequence::from_boxes(&boxes, self.params.config.p);
        let mut h = forecast(&past, &self.context, &self.params)?;
        if h.boxes.len() > q {
            h.boxes.truncate(q);
        }
        while h.boxes.len() < q {
            let n = h.boxes.len();
            let last = h.boxes[n - 1];
            let prev = if n >= 2 { h.boxes[n - 2] } else { boxes[boxes.len() - 1] };
            h.boxes.push((last + (last - prev)).floored());
        }
        Ok(h)
    }

    fn reset(&mut self) {
        self.history.clear();
        self.context.clear();
        self.count = 0;
    }

    fn observations(&self) -> usize {
        self.count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::ForecasterConfig;

    #[test]
    fn adapter_matches_direct_forecast() {
        let cfg = ForecasterConfig {
            p: 3,
            q: 4,
            hidden: 4,
            embed_dim: 2,
            feature_dim: 3,
            context: ContextSource::Scene,
            ..ForecasterConfig::default()
        };
        let params = Arc::new(ForecasterParams::random(cfg, 8));
        let mut pred = LearnedPredictor::new(params.clone());
        let boxes: Vec<_> = (0..6)
            .map(|i| BoundingBox::new(i as f64 * 2.0, 1.0, 5.0, 9.0))
            .collect();
        assert!(pred.predict(4).is_err());
        for (i, b) in boxes.iter().enumerate() {
            pred.observe(i as u32, *b);
        }
        pred.observe_context(Some(&[0.5, -0.5]));
        let direct = forecast(&PastSequence::from_boxes(&boxes[2..], 3), &[0.5, -0.5], &params).unwrap();
        assert_eq!(pred.predict(4).unwrap(), direct);
        assert_eq!(pred.predict(2).unwrap().len(), 2);
        let long = pred.predict(7).unwrap();
        assert_eq!(long.len(), 7);
        assert_eq!(&long.boxes[..4], &direct.boxes[..]);
        pred.reset();
        assert_eq!(pred.observations(), 0);
    }
}
