//! Prediction models driving VM memory splits: the per-customer
//! untouched-memory quantile model, the latency-insensitivity classifiers,
//! their calibrated tradeoff curves, and the combined optimizer that splits
//! the violation budget between them.

mod combined;
mod curves;
mod sensitivity;
mod snapshot;
mod untouched;

pub use combined::{solve_combined, CombinedConfig, CombinedSolution};
pub use curves::{
    estimate_tradeoff_curves, TradeoffCurves, UntouchedCase, ValidationSet, CURVE_GRID_LEN,
};
pub use sensitivity::{
    calibrate_forest, calibrate_threshold, measure_rates, synthesize_features, ClassifierKind,
    FeatureId, ForestModel, LabeledSample, SensitivityFeatures, SensitivityModel, Stump,
    ThresholdModel,
};
pub use snapshot::{
    calibrate_from_trace, CalibrationOptions, CalibrationReport, ModelSnapshot, PondModels,
    ScenarioCalibration,
};
pub use untouched::{UntouchedHistory, SUMMARY_PERCENTILES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("model not calibrated: {0}")]
    Uncalibrated(String),
    #[error("invalid predictor configuration: {0}")]
    Config(String),
    #[error("snapshot was calibrated for pdm {snapshot}, run requested {requested}")]
    PdmMismatch { snapshot: f64, requested: f64 },
    #[error("model snapshot malformed: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
