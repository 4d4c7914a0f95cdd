//! Model snapshots: calibrating predictors from an offline trace, exporting
//! them to a versioned, self-describing text file, and instantiating the
//! models a policy run needs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::trace::VmRequest;

use super::combined::{solve_combined, CombinedConfig, CombinedSolution};
use super::curves::{
    estimate_tradeoff_curves, threshold_at, TradeoffCurves, UntouchedCase, ValidationSet,
    CURVE_GRID_LEN,
};
use super::curves::grid_from_points;
use super::sensitivity::{
    forest_li_points, min_votes_for_allowance, sorted_sensitive_drams, synthesize_features,
    theta_for_allowance, train_stumps, ClassifierKind, FeatureId, ForestModel, LabeledSample,
    SensitivityModel, Stump, ThresholdModel,
};
use super::untouched::UntouchedHistory;
use super::PredictorError;

const SNAPSHOT_MAGIC: &str = "poolsim-model-snapshot";
const SNAPSHOT_VERSION: u32 = 1;

const SECONDS_PER_DAY: u64 = 86_400;

/// Per-latency-scenario calibration artifacts. The threshold and vote tables
/// are indexed by the false-positive target in tenths of a percentage point,
/// so a classifier can be instantiated at any budget the combined optimizer
/// picks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCalibration {
    /// LI attainable per FP budget when deploying the threshold model.
    pub li_curve_threshold: Vec<f64>,
    /// LI attainable per FP budget when deploying the stump forest.
    pub li_curve_forest: Vec<f64>,
    pub theta_by_fp: Vec<f64>,
    pub stumps: Vec<Stump>,
    pub min_votes_by_fp: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub version: u32,
    pub pdm: f64,
    /// Salt under which telemetry features were synthesized.
    pub feature_salt: u64,
    pub um_curve: Vec<f64>,
    pub scenarios: BTreeMap<String, ScenarioCalibration>,
    pub history: UntouchedHistory,
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub feature_salt: u64,
    pub forest_stumps: usize,
    pub forest_seed: u64,
    pub history_window_days: u32,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            feature_salt: 0x706f6f6c,
            forest_stumps: 48,
            forest_seed: 1,
            history_window_days: 7,
        }
    }
}

/// Curves estimated during calibration, for reporting.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub um_curve: Vec<f64>,
    pub li_curves: BTreeMap<String, Vec<f64>>,
}

fn scenario_names(trace: &[VmRequest]) -> Result<Vec<String>, PredictorError> {
    let first = trace
        .first()
        .ok_or_else(|| PredictorError::TooFewSamples { needed: 1, got: 0 })?;
    let names: Vec<String> = first.ground_truth.slowdown_full_pool.keys().cloned().collect();
    if names.is_empty() {
        return Err(PredictorError::Config(
            "trace carries no latency scenarios".into(),
        ));
    }
    for vm in trace {
        if vm.ground_truth.slowdown_full_pool.len() != names.len()
            || !names
                .iter()
                .all(|n| vm.ground_truth.slowdown_full_pool.contains_key(n))
        {
            return Err(PredictorError::Config(format!(
                "vm {} scenario set differs from the trace's first record",
                vm.vm_id
            )));
        }
    }
    Ok(names)
}

/// Calibrates all models from an offline trace whose ground truth plays the
/// role of measured labels. The trace's earlier half feeds the quantile
/// histories; its later half is held out for the overprediction curve.
pub fn calibrate_from_trace(
    trace: &[VmRequest],
    pdm: f64,
    opts: &CalibrationOptions,
) -> Result<(ModelSnapshot, CalibrationReport), PredictorError> {
    if pdm <= 0.0 || pdm > 0.25 {
        return Err(PredictorError::Config(format!("pdm {pdm} outside (0, 0.25]")));
    }
    let names = scenario_names(trace)?;

    let split = trace.len() / 2;
    let mut train_history = UntouchedHistory::new(opts.history_window_days);
    let mut pending: BTreeMap<u32, Vec<(String, f64)>> = BTreeMap::new();
    for vm in &trace[..split] {
        let day = (vm.arrival / SECONDS_PER_DAY) as u32;
        pending
            .entry(day)
            .or_default()
            .push((vm.customer_id.clone(), vm.ground_truth.untouched_fraction));
    }
    for (day, batch) in &pending {
        train_history.ingest_batch(*day, batch.iter().map(|(c, v)| (c.as_str(), *v)));
    }

    let untouched_cases: Vec<UntouchedCase> = trace[split..]
        .iter()
        .map(|vm| UntouchedCase {
            customer: vm.customer_id.clone(),
            actual_untouched: vm.ground_truth.untouched_fraction,
            memory_gb: vm.memory_gb,
        })
        .collect();

    let mut scenarios = BTreeMap::new();
    let mut li_curves = BTreeMap::new();
    let mut um_curve = None;
    for (scenario_idx, name) in names.iter().enumerate() {
        let samples: Vec<LabeledSample> = trace
            .iter()
            .map(|vm| LabeledSample {
                features: synthesize_features(&vm.ground_truth, vm.vm_id, opts.feature_salt),
                slowdown: vm.ground_truth.slowdown_full_pool[name],
            })
            .collect();
        let set = ValidationSet {
            sensitivity: samples.clone(),
            untouched: untouched_cases.clone(),
        };
        let curves = estimate_tradeoff_curves(&set, &train_history, pdm)?;
        if um_curve.is_none() {
            um_curve = Some(curves.um_of_op.clone());
        }

        let n = samples.len();
        let sensitive = sorted_sensitive_drams(&samples, pdm);
        let theta_by_fp: Vec<f64> = (0..CURVE_GRID_LEN)
            .map(|t| {
                let allowed = (t as f64 / 1000.0 * n as f64).floor() as usize;
                theta_for_allowance(&sensitive, allowed)
            })
            .collect();

        let stumps = train_stumps(
            &samples,
            pdm,
            opts.forest_stumps,
            opts.forest_seed.wrapping_add(scenario_idx as u64),
        );
        let probe = ForestModel {
            stumps: stumps.clone(),
            min_votes: 0,
        };
        let sensitive_votes: Vec<u32> = samples
            .iter()
            .filter(|s| s.slowdown > pdm)
            .map(|s| probe.votes(&s.features))
            .collect();
        let min_votes_by_fp: Vec<u32> = (0..CURVE_GRID_LEN)
            .map(|t| {
                let allowed = (t as f64 / 1000.0 * n as f64).floor() as usize;
                min_votes_for_allowance(&sensitive_votes, opts.forest_stumps, allowed)
            })
            .collect();
        let li_curve_forest = grid_from_points(&forest_li_points(&stumps, &samples, pdm));

        li_curves.insert(name.clone(), li_curve_forest.clone());
        scenarios.insert(
            name.clone(),
            ScenarioCalibration {
                li_curve_threshold: curves.li_of_fp,
                li_curve_forest,
                theta_by_fp,
                stumps,
                min_votes_by_fp,
            },
        );
    }

    // The shipped history covers the full calibration corpus.
    let mut full_history = UntouchedHistory::new(opts.history_window_days);
    let mut pending: BTreeMap<u32, Vec<(String, f64)>> = BTreeMap::new();
    for vm in trace {
        let day = (vm.arrival / SECONDS_PER_DAY) as u32;
        pending
            .entry(day)
            .or_default()
            .push((vm.customer_id.clone(), vm.ground_truth.untouched_fraction));
    }
    for (day, batch) in &pending {
        full_history.ingest_batch(*day, batch.iter().map(|(c, v)| (c.as_str(), *v)));
    }

    let um_curve = um_curve.expect("at least one scenario");
    Ok((
        ModelSnapshot {
            version: SNAPSHOT_VERSION,
            pdm,
            feature_salt: opts.feature_salt,
            um_curve: um_curve.clone(),
            scenarios,
            history: full_history,
        },
        CalibrationReport {
            um_curve,
            li_curves,
        },
    ))
}

/// Models instantiated for one policy run: a classifier and quantile target
/// realizing the combined optimum for the run's scenario and contract.
#[derive(Debug, Clone)]
pub struct PondModels {
    pub classifier: SensitivityModel,
    /// Overprediction target handed to the quantile predictor, percent.
    pub um_target_pct: f64,
    pub solution: CombinedSolution,
    pub feature_salt: u64,
    pub pdm: f64,
}

impl ModelSnapshot {
    /// Planning curves for a scenario, matching the classifier that will run.
    pub fn curves_for(
        &self,
        scenario: &str,
        kind: ClassifierKind,
    ) -> Result<TradeoffCurves, PredictorError> {
        let sc = self
            .scenarios
            .get(scenario)
            .ok_or_else(|| PredictorError::Uncalibrated(format!("no scenario {scenario}")))?;
        let li_of_fp = match kind {
            ClassifierKind::DramBoundThreshold => sc.li_curve_threshold.clone(),
            ClassifierKind::Forest => sc.li_curve_forest.clone(),
        };
        Ok(TradeoffCurves {
            li_of_fp,
            um_of_op: self.um_curve.clone(),
        })
    }

    /// Solves the combined budget split for this scenario and contract and
    /// instantiates the classifier at the resulting false-positive target.
    pub fn instantiate(
        &self,
        scenario: &str,
        cfg: &CombinedConfig,
        kind: ClassifierKind,
    ) -> Result<PondModels, PredictorError> {
        if (cfg.pdm - self.pdm).abs() > 1e-9 {
            return Err(PredictorError::PdmMismatch {
                snapshot: self.pdm,
                requested: cfg.pdm,
            });
        }
        let sc = self
            .scenarios
            .get(scenario)
            .ok_or_else(|| PredictorError::Uncalibrated(format!("no scenario {scenario}")))?;
        let curves = self.curves_for(scenario, kind)?;
        let solution = solve_combined(&curves, cfg)?;
        let fp_t = (solution.fp_pct * 10.0).round() as usize;
        let classifier = match kind {
            ClassifierKind::DramBoundThreshold => SensitivityModel::Threshold(ThresholdModel {
                theta: sc.theta_by_fp[fp_t],
            }),
            ClassifierKind::Forest => SensitivityModel::Forest(ForestModel {
                stumps: sc.stumps.clone(),
                min_votes: sc.min_votes_by_fp[fp_t],
            }),
        };
        Ok(PondModels {
            classifier,
            um_target_pct: solution.op_pct,
            solution,
            feature_salt: self.feature_salt,
            pdm: self.pdm,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SNAPSHOT_MAGIC} v{}", self.version);
        let _ = writeln!(out, "pdm {}", self.pdm);
        let _ = writeln!(out, "feature_salt {}", self.feature_salt);
        let _ = writeln!(out, "um_curve {}", join_f64(&self.um_curve));
        for (name, sc) in &self.scenarios {
            let _ = writeln!(out, "scenario {name}");
            let _ = writeln!(out, "li_curve_threshold {}", join_f64(&sc.li_curve_threshold));
            let _ = writeln!(out, "li_curve_forest {}", join_f64(&sc.li_curve_forest));
            let _ = writeln!(out, "theta_by_fp {}", join_f64(&sc.theta_by_fp));
            let _ = writeln!(out, "stumps {}", sc.stumps.len());
            for s in &sc.stumps {
                let _ = writeln!(
                    out,
                    "stump {} {} {}",
                    s.feature.token(),
                    s.threshold,
                    if s.insensitive_below { "below" } else { "above" }
                );
            }
            let _ = writeln!(
                out,
                "min_votes_by_fp {}",
                sc.min_votes_by_fp
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            let _ = writeln!(out, "end_scenario");
        }
        let _ = writeln!(
            out,
            "history window_days {} current_day {}",
            self.history.window_days(),
            self.history.current_day()
        );
        for (customer, ch) in self.history.customers() {
            let _ = writeln!(out, "customer {customer} {}", ch.len());
            for (day, value) in ch.observations() {
                let _ = writeln!(out, "obs {day} {value}");
            }
        }
        let _ = writeln!(out, "end");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PredictorError> {
        Parser::new(text).parse()
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn join_f64(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 8);
    let _ = write!(s, "{}", values.len());
    for v in values {
        let _ = write!(s, " {v}");
    }
    s
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str), PredictorError> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| PredictorError::Snapshot("unexpected end of snapshot".into()))
    }

    fn expect_kv<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, PredictorError> {
        let (no, line) = self.next_line()?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| PredictorError::Snapshot(format!("line {no}: expected `{key} ...`")))?;
        rest.trim()
            .parse()
            .map_err(|_| PredictorError::Snapshot(format!("line {no}: bad value for {key}")))
    }

    fn parse_vec_f64(line_no: usize, rest: &str) -> Result<Vec<f64>, PredictorError> {
        let mut it = rest.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| PredictorError::Snapshot(format!("line {line_no}: missing count")))?;
        let values: Vec<f64> = it
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| PredictorError::Snapshot(format!("line {line_no}: bad float")))?;
        if values.len() != n {
            return Err(PredictorError::Snapshot(format!(
                "line {line_no}: expected {n} values, got {}",
                values.len()
            )));
        }
        Ok(values)
    }

    fn expect_vec_f64(&mut self, key: &str) -> Result<Vec<f64>, PredictorError> {
        let (no, line) = self.next_line()?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| PredictorError::Snapshot(format!("line {no}: expected `{key} ...`")))?;
        Self::parse_vec_f64(no, rest)
    }

    fn parse(mut self) -> Result<ModelSnapshot, PredictorError> {
        let (_, header) = self.next_line()?;
        let version = header
            .strip_prefix(SNAPSHOT_MAGIC)
            .and_then(|r| r.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| PredictorError::Snapshot("bad snapshot header".into()))?;
        if version != SNAPSHOT_VERSION {
            return Err(PredictorError::Snapshot(format!(
                "unsupported snapshot version {version}"
            )));
        }
        let pdm: f64 = self.expect_kv("pdm")?;
        let feature_salt: u64 = self.expect_kv("feature_salt")?;
        let um_curve = self.expect_vec_f64("um_curve")?;

        let mut scenarios = BTreeMap::new();
        let (window_days, current_day) = loop {
            let (no, line) = self.next_line()?;
            if let Some(name) = line.strip_prefix("scenario ") {
                let li_curve_threshold = self.expect_vec_f64("li_curve_threshold")?;
                let li_curve_forest = self.expect_vec_f64("li_curve_forest")?;
                let theta_by_fp = self.expect_vec_f64("theta_by_fp")?;
                let n_stumps: usize = self.expect_kv("stumps")?;
                let mut stumps = Vec::with_capacity(n_stumps);
                for _ in 0..n_stumps {
                    let (sno, sline) = self.next_line()?;
                    let mut it = sline.split_whitespace();
                    let (tag, feat, thr, orient) =
                        (it.next(), it.next(), it.next(), it.next());
                    let bad =
                        || PredictorError::Snapshot(format!("line {sno}: bad stump record"));
                    if tag != Some("stump") {
                        return Err(bad());
                    }
                    stumps.push(Stump {
                        feature: feat.and_then(FeatureId::from_token).ok_or_else(bad)?,
                        threshold: thr.and_then(|t| t.parse().ok()).ok_or_else(bad)?,
                        insensitive_below: match orient {
                            Some("below") => true,
                            Some("above") => false,
                            _ => return Err(bad()),
                        },
                    });
                }
                let min_votes_by_fp: Vec<u32> = {
                    let (vno, vline) = self.next_line()?;
                    let rest = vline.strip_prefix("min_votes_by_fp ").ok_or_else(|| {
                        PredictorError::Snapshot(format!("line {vno}: expected min_votes_by_fp"))
                    })?;
                    rest.split_whitespace()
                        .map(|t| t.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| {
                            PredictorError::Snapshot(format!("line {vno}: bad vote count"))
                        })?
                };
                let (eno, eline) = self.next_line()?;
                if eline != "end_scenario" {
                    return Err(PredictorError::Snapshot(format!(
                        "line {eno}: expected end_scenario"
                    )));
                }
                scenarios.insert(
                    name.to_string(),
                    ScenarioCalibration {
                        li_curve_threshold,
                        li_curve_forest,
                        theta_by_fp,
                        stumps,
                        min_votes_by_fp,
                    },
                );
            } else if let Some(rest) = line.strip_prefix("history ") {
                let mut it = rest.split_whitespace();
                let bad = || PredictorError::Snapshot(format!("line {no}: bad history header"));
                if it.next() != Some("window_days") {
                    return Err(bad());
                }
                let window: u32 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
                if it.next() != Some("current_day") {
                    return Err(bad());
                }
                let day: u32 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
                break (window, day);
            } else {
                return Err(PredictorError::Snapshot(format!(
                    "line {no}: expected scenario or history section"
                )));
            }
        };

        let mut observations: Vec<(String, u32, f64)> = Vec::new();
        loop {
            let (no, line) = self.next_line()?;
            if line == "end" {
                break;
            }
            let rest = line.strip_prefix("customer ").ok_or_else(|| {
                PredictorError::Snapshot(format!("line {no}: expected customer record"))
            })?;
            let mut it = rest.split_whitespace();
            let bad = || PredictorError::Snapshot(format!("line {no}: bad customer record"));
            let customer = it.next().ok_or_else(bad)?.to_string();
            let count: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
            for _ in 0..count {
                let (ono, oline) = self.next_line()?;
                let obad = || PredictorError::Snapshot(format!("line {ono}: bad observation"));
                let rest = oline.strip_prefix("obs ").ok_or_else(obad)?;
                let mut oit = rest.split_whitespace();
                let day: u32 = oit.next().and_then(|t| t.parse().ok()).ok_or_else(obad)?;
                let value: f64 = oit.next().and_then(|t| t.parse().ok()).ok_or_else(obad)?;
                observations.push((customer.clone(), day, value));
            }
        }
        let history = UntouchedHistory::from_observations(
            window_days,
            current_day,
            observations.iter().map(|(c, d, v)| (c.as_str(), *d, *v)),
        );

        let snapshot = ModelSnapshot {
            version,
            pdm,
            feature_salt,
            um_curve,
            scenarios,
            history,
        };
        snapshot.validate()?;
        Ok(snapshot)
    }
}

impl ModelSnapshot {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.um_curve.len() != CURVE_GRID_LEN {
            return Err(PredictorError::Snapshot(format!(
                "um_curve has {} points, expected {CURVE_GRID_LEN}",
                self.um_curve.len()
            )));
        }
        for (name, sc) in &self.scenarios {
            if sc.li_curve_threshold.len() != CURVE_GRID_LEN
                || sc.li_curve_forest.len() != CURVE_GRID_LEN
                || sc.theta_by_fp.len() != CURVE_GRID_LEN
                || sc.min_votes_by_fp.len() != CURVE_GRID_LEN
            {
                return Err(PredictorError::Snapshot(format!(
                    "scenario {name}: calibration tables must have {CURVE_GRID_LEN} points"
                )));
            }
        }
        Ok(())
    }

    /// Realizes a threshold classifier for ad-hoc use at a given target.
    pub fn threshold_for(
        samples: &[LabeledSample],
        pdm: f64,
        fp_pct: f64,
    ) -> ThresholdModel {
        threshold_at(samples, pdm, fp_pct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_trace, TraceGenConfig};

    fn small_trace() -> Vec<VmRequest> {
        generate_trace(&TraceGenConfig {
            n_vms: 2000,
            rng_seed: 21,
            ..TraceGenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn calibrate_and_round_trip_snapshot() {
        let trace = small_trace();
        let (snapshot, report) =
            calibrate_from_trace(&trace, 0.05, &CalibrationOptions::default()).unwrap();
        assert!(snapshot.scenarios.contains_key("lat182"));
        assert!(snapshot.scenarios.contains_key("lat222"));
        assert_eq!(report.um_curve.len(), CURVE_GRID_LEN);

        let text = snapshot.to_text();
        let back = ModelSnapshot::from_text(&text).unwrap();
        assert_eq!(back, snapshot);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn instantiate_solves_budget_and_builds_classifier() {
        let trace = small_trace();
        let (snapshot, _) =
            calibrate_from_trace(&trace, 0.05, &CalibrationOptions::default()).unwrap();
        let cfg = CombinedConfig::new(0.05, 98.0).unwrap();
        for kind in [ClassifierKind::DramBoundThreshold, ClassifierKind::Forest] {
            let models = snapshot.instantiate("lat182", &cfg, kind).unwrap();
            assert!(models.solution.fp_pct + models.solution.op_pct <= 2.0 + 1e-9);
            assert!(models.um_target_pct >= 0.0);
        }
    }

    #[test]
    fn pdm_mismatch_rejected() {
        let trace = small_trace();
        let (snapshot, _) =
            calibrate_from_trace(&trace, 0.05, &CalibrationOptions::default()).unwrap();
        let cfg = CombinedConfig::new(0.10, 98.0).unwrap();
        assert!(matches!(
            snapshot.instantiate("lat182", &cfg, ClassifierKind::Forest),
            Err(PredictorError::PdmMismatch { .. })
        ));
    }

    #[test]
    fn unknown_scenario_is_uncalibrated() {
        let trace = small_trace();
        let (snapshot, _) =
            calibrate_from_trace(&trace, 0.05, &CalibrationOptions::default()).unwrap();
        let cfg = CombinedConfig::new(0.05, 98.0).unwrap();
        assert!(matches!(
            snapshot.instantiate("lat999", &cfg, ClassifierKind::Forest),
            Err(PredictorError::Uncalibrated(_))
        ));
    }
}
