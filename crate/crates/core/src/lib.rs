//! Joint multi-object tracking and trajectory forecasting.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] – centroid-form boxes, IOU / cosine distances, velocities.
//! * [`assignment`] – gated Hungarian solver plus a brute-force oracle.
//! * [`motion`] – constant-velocity and Kalman predictors.
//! * [`forecaster`] – GRU encoder/decoders, trajectory concatenation, losses, training.
//! * [`association`] – the online tracker and its three association stages.
//! * [`metrics`] – CLEAR-MOT, IDF1, ADE/FDE, AIOU/FIOU.
//! * [`simdata`] – seeded synthetic scenes with ground truth.
//! * [`io`] – MOTChallenge text files, embedding sidecars, run configuration.

pub mod assignment;
pub mod association;
pub mod error;
pub mod forecaster;
pub mod geometry;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod motion;
pub mod rng;
pub mod simdata;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, BoxWithVelocity, FrameObservations, Velocity};
pub use matrix::Matrix;
pub use motion::{ForecastHorizon, MotionPredictor};
pub use association::{PredictorSpec, StageToggles, TrackOutput, Tracker, TrackerConfig};
pub use forecaster::{ForecasterConfig, ForecasterParams, TrainingConfig};
pub use io::{MotRecord, MotSequence, RunConfig};
pub use metrics::{ForecastReport, TrackingReport};
pub use simdata::SceneSpec;
