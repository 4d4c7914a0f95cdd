//! Tradeoff curves: how much the classifier can label insensitive as a
//! function of its false-positive budget, and how much untouched memory the
//! quantile model can claim as a function of its overprediction budget.

use super::sensitivity::{sorted_sensitive_drams, LabeledSample, ThresholdModel};
use super::untouched::UntouchedHistory;
use super::PredictorError;

/// Curves are tabulated on a 0.1 percentage-point grid over [0, 50].
pub const CURVE_GRID_LEN: usize = 501;

const MIN_VALIDATION_SAMPLES: usize = 100;

/// Held-out VM for untouched-memory curve estimation.
#[derive(Debug, Clone)]
pub struct UntouchedCase {
    pub customer: String,
    pub actual_untouched: f64,
    pub memory_gb: u32,
}

/// Labeled data backing curve estimation: slowdown-labeled telemetry samples
/// for the classifier and held-out untouched observations for the quantile
/// model.
#[derive(Debug, Clone, Default)]
pub struct ValidationSet {
    pub sensitivity: Vec<LabeledSample>,
    pub untouched: Vec<UntouchedCase>,
}

/// Monotone step curves over the 0.1pp rate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurves {
    /// Grid index = allowed false-positive rate in tenths of a point;
    /// value = % of workloads labeled latency-insensitive.
    pub li_of_fp: Vec<f64>,
    /// Grid index = allowed overprediction rate in tenths of a point;
    /// value = average % of memory claimed untouched.
    pub um_of_op: Vec<f64>,
}

impl TradeoffCurves {
    pub fn validate(&self) -> Result<(), PredictorError> {
        for (name, curve) in [("li_of_fp", &self.li_of_fp), ("um_of_op", &self.um_of_op)] {
            if curve.len() != CURVE_GRID_LEN {
                return Err(PredictorError::Config(format!(
                    "{name} must have {CURVE_GRID_LEN} grid points, got {}",
                    curve.len()
                )));
            }
            let mut prev = f64::NEG_INFINITY;
            for (i, v) in curve.iter().enumerate() {
                if !(0.0..=100.0).contains(v) {
                    return Err(PredictorError::Config(format!(
                        "{name}[{i}] = {v} outside [0,100]"
                    )));
                }
                if *v < prev {
                    return Err(PredictorError::Config(format!(
                        "{name} not monotone at index {i}"
                    )));
                }
                prev = *v;
            }
        }
        Ok(())
    }
}

/// Builds a monotone grid curve from achieved (rate%, value%) points: each
/// grid cell holds the best value achievable at a rate at or below it.
pub(crate) fn grid_from_points(points: &[(f64, f64)]) -> Vec<f64> {
    let mut grid = vec![0.0f64; CURVE_GRID_LEN];
    for &(rate, value) in points {
        let idx = (rate * 10.0 - 1e-9).ceil().max(0.0) as usize;
        if idx < CURVE_GRID_LEN && value > grid[idx] {
            grid[idx] = value;
        }
    }
    for i in 1..CURVE_GRID_LEN {
        grid[i] = grid[i].max(grid[i - 1]);
    }
    grid
}

/// Achieved (fp%, li%) operating points of the threshold classifier, swept
/// over every distinct DRAM-bound value.
pub(crate) fn li_points(samples: &[LabeledSample], pdm: f64) -> Vec<(f64, f64)> {
    let n = samples.len() as f64;
    let mut order: Vec<(f64, bool)> = samples
        .iter()
        .map(|s| (s.features.dram_bound, s.slowdown <= pdm))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::with_capacity(order.len() + 1);
    let mut li = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        // Threshold exactly at this value: everything strictly below counts.
        points.push((100.0 * fp as f64 / n, 100.0 * li as f64 / n));
        let v = order[i].0;
        while i < order.len() && order[i].0 == v {
            li += 1;
            if !order[i].1 {
                fp += 1;
            }
            i += 1;
        }
    }
    points.push((100.0 * fp as f64 / n, 100.0 * li as f64 / n));
    points
}

/// Achieved (op%, um%) operating points of the quantile predictor, swept over
/// target rates on the grid.
pub(crate) fn um_points(
    cases: &[UntouchedCase],
    history: &UntouchedHistory,
) -> Vec<(f64, f64)> {
    let n = cases.len() as f64;
    let total_mem: f64 = cases.iter().map(|c| c.memory_gb as f64).sum();
    let mut points = Vec::with_capacity(CURVE_GRID_LEN);
    for t in 0..CURVE_GRID_LEN {
        let target = t as f64 / 10.0;
        let mut over = 0usize;
        let mut claimed = 0.0f64;
        for case in cases {
            let pred = history.predict(&case.customer, target);
            if pred > case.actual_untouched {
                over += 1;
            }
            claimed += pred * case.memory_gb as f64;
        }
        points.push((100.0 * over as f64 / n, 100.0 * claimed / total_mem));
    }
    points
}

/// Estimates both tradeoff curves from labeled validation data.
pub fn estimate_tradeoff_curves(
    set: &ValidationSet,
    history: &UntouchedHistory,
    pdm: f64,
) -> Result<TradeoffCurves, PredictorError> {
    for (n, what) in [
        (set.sensitivity.len(), "sensitivity samples"),
        (set.untouched.len(), "untouched cases"),
    ] {
        if n < MIN_VALIDATION_SAMPLES {
            return Err(PredictorError::TooFewSamples {
                needed: MIN_VALIDATION_SAMPLES,
                got: n,
            });
        }
        let _ = what;
    }
    let curves = TradeoffCurves {
        li_of_fp: grid_from_points(&li_points(&set.sensitivity, pdm)),
        um_of_op: grid_from_points(&um_points(&set.untouched, history)),
    };
    curves.validate()?;
    Ok(curves)
}

/// Threshold model realizing a point on the LI curve at the given allowed
/// false-positive rate.
pub(crate) fn threshold_at(samples: &[LabeledSample], pdm: f64, fp_pct: f64) -> ThresholdModel {
    let sensitive = sorted_sensitive_drams(samples, pdm);
    let allowed = (fp_pct / 100.0 * samples.len() as f64).floor() as usize;
    ThresholdModel {
        theta: super::sensitivity::theta_for_allowance(&sensitive, allowed),
    }
}
