//! Latency-insensitivity classification from core-PMU style telemetry.
//!
//! Two interchangeable models: a single threshold on the DRAM-bound counter,
//! and a small forest of randomized decision stumps over all counters. Both
//! are calibrated so that their validation false-positive rate (VMs labeled
//! insensitive that actually exceed the slowdown margin, as a share of all
//! VMs) stays at or below a target.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::trace::WorkloadGroundTruth;

use super::PredictorError;

/// Telemetry features available for opaque VMs. The noise channel stands in
/// for the many uninformative counters a real PMU sample carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFeatures {
    /// Fraction of pipeline slots stalled on DRAM.
    pub dram_bound: f64,
    /// Fraction of pipeline slots stalled on any memory level.
    pub memory_bound: f64,
    pub noise: f64,
}

const DRAM_BOUND_LOG_SD: f64 = 1.2;
const DRAM_BOUND_FLOOR: f64 = 0.012;
const OUTLIER_RATE: f64 = 0.03;
const MEMORY_BOUND_LOG_SD: f64 = 1.7;

/// Threshold used when every sample may be labeled insensitive.
const MAX_THETA: f64 = 2.0;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn hash_u01(vm_id: u64, salt: u64, stream: u64) -> f64 {
    let h = splitmix64(splitmix64(vm_id ^ salt.rotate_left(17)) ^ stream);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn hash_normal(vm_id: u64, salt: u64, stream: u64) -> f64 {
    let u1 = hash_u01(vm_id, salt, stream).max(1e-12);
    let u2 = hash_u01(vm_id, salt, stream.wrapping_add(1));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Simulated PMU telemetry for a VM. Counters scale with how hard the
/// workload is hit when fully pool-backed (its mildest scenario), with
/// multiplicative measurement noise and a small outlier channel for
/// workloads whose stalls hide from the DRAM-bound counter. Deterministic
/// in (vm_id, salt).
pub fn synthesize_features(
    gt: &WorkloadGroundTruth,
    vm_id: u64,
    salt: u64,
) -> SensitivityFeatures {
    let basis = gt
        .slowdown_full_pool
        .values()
        .fold(f64::INFINITY, |a, b| a.min(*b));
    let basis = if basis.is_finite() { basis } else { 0.0 };
    let dram_ratio = (DRAM_BOUND_LOG_SD * hash_normal(vm_id, salt, 1)).exp();
    let outlier = if hash_u01(vm_id, salt, 5) < OUTLIER_RATE {
        0.1 + 0.4 * hash_u01(vm_id, salt, 7)
    } else {
        1.0
    };
    let dram_floor = DRAM_BOUND_FLOOR * hash_normal(vm_id, salt, 3).abs();
    let mem_ratio = (MEMORY_BOUND_LOG_SD * hash_normal(vm_id, salt, 9)).exp();
    let mem_base = 0.06 + 0.04 * hash_u01(vm_id, salt, 11);
    SensitivityFeatures {
        dram_bound: (basis * dram_ratio * outlier + dram_floor).clamp(0.0, 1.0),
        memory_bound: (mem_base + basis * mem_ratio).clamp(0.0, 1.0),
        noise: hash_u01(vm_id, salt, 13),
    }
}

/// One calibration sample: telemetry plus the measured slowdown when the
/// workload runs entirely on pool memory.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSample {
    pub features: SensitivityFeatures,
    pub slowdown: f64,
}

impl LabeledSample {
    fn insensitive(&self, pdm: f64) -> bool {
        self.slowdown <= pdm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierKind {
    DramBoundThreshold,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub theta: f64,
}

impl ThresholdModel {
    pub fn classify(&self, f: &SensitivityFeatures) -> bool {
        f.dram_bound < self.theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureId {
    DramBound,
    MemoryBound,
    Noise,
}

impl FeatureId {
    pub const ALL: [FeatureId; 3] = [FeatureId::DramBound, FeatureId::MemoryBound, FeatureId::Noise];

    fn value(&self, f: &SensitivityFeatures) -> f64 {
        match self {
            FeatureId::DramBound => f.dram_bound,
            FeatureId::MemoryBound => f.memory_bound,
            FeatureId::Noise => f.noise,
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            FeatureId::DramBound => "dram_bound",
            FeatureId::MemoryBound => "memory_bound",
            FeatureId::Noise => "noise",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "dram_bound" => Some(FeatureId::DramBound),
            "memory_bound" => Some(FeatureId::MemoryBound),
            "noise" => Some(FeatureId::Noise),
            _ => None,
        }
    }
}

/// Axis-aligned decision stump voting on latency insensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: FeatureId,
    pub threshold: f64,
    pub insensitive_below: bool,
}

impl Stump {
    fn vote_insensitive(&self, f: &SensitivityFeatures) -> bool {
        (self.feature.value(f) < self.threshold) == self.insensitive_below
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub stumps: Vec<Stump>,
    /// Insensitive iff at least this many stumps vote insensitive.
    pub min_votes: u32,
}

impl ForestModel {
    pub fn votes(&self, f: &SensitivityFeatures) -> u32 {
        self.stumps.iter().filter(|s| s.vote_insensitive(f)).count() as u32
    }

    pub fn classify(&self, f: &SensitivityFeatures) -> bool {
        self.votes(f) >= self.min_votes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SensitivityModel {
    Threshold(ThresholdModel),
    Forest(ForestModel),
}

impl SensitivityModel {
    pub fn classify(&self, f: &SensitivityFeatures) -> bool {
        match self {
            SensitivityModel::Threshold(m) => m.classify(f),
            SensitivityModel::Forest(m) => m.classify(f),
        }
    }
}

fn require_samples(samples: &[LabeledSample], needed: usize) -> Result<(), PredictorError> {
    if samples.len() < needed {
        return Err(PredictorError::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    Ok(())
}

/// Sorted DRAM-bound values of samples that exceed the margin.
pub(crate) fn sorted_sensitive_drams(samples: &[LabeledSample], pdm: f64) -> Vec<f64> {
    let mut v: Vec<f64> = samples
        .iter()
        .filter(|s| !s.insensitive(pdm))
        .map(|s| s.features.dram_bound)
        .collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Largest threshold on a sorted sensitive-value list whose false-positive
/// count stays within `allowed`.
pub(crate) fn theta_for_allowance(sorted_sensitive: &[f64], allowed: usize) -> f64 {
    if allowed < sorted_sensitive.len() {
        sorted_sensitive[allowed]
    } else {
        MAX_THETA
    }
}

/// Calibrates the DRAM-bound threshold model: the largest threshold whose
/// validation false-positive rate stays at or below `target_fp_pct`.
pub fn calibrate_threshold(
    samples: &[LabeledSample],
    pdm: f64,
    target_fp_pct: f64,
) -> Result<ThresholdModel, PredictorError> {
    require_samples(samples, 1)?;
    if !(0.0..=100.0).contains(&target_fp_pct) {
        return Err(PredictorError::Config(format!(
            "target_fp_pct {target_fp_pct} outside [0,100]"
        )));
    }
    let sensitive = sorted_sensitive_drams(samples, pdm);
    let allowed = (target_fp_pct / 100.0 * samples.len() as f64).floor() as usize;
    Ok(ThresholdModel {
        theta: theta_for_allowance(&sensitive, allowed),
    })
}

/// Exact best split of one feature: sweeps every distinct value as a
/// strict-below threshold and returns the orientation and cut with the
/// lowest cost. Mislabeling a sensitive sample as insensitive costs
/// `fp_cost`; the opposite mistake costs 1.
fn best_split(feature: FeatureId, boot: &[(f64, bool)], fp_cost: f64) -> (f64, Stump) {
    let mut order: Vec<(f64, bool)> = boot.to_vec();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_insensitive = order.iter().filter(|(_, l)| *l).count();
    let n = order.len();

    let mut best_err = f64::INFINITY;
    let mut best = Stump {
        feature,
        threshold: 0.0,
        insensitive_below: true,
    };
    let mut insens_below = 0usize;
    let mut below = 0usize;
    let mut i = 0;
    // Candidate thresholds: each distinct value plus one past the maximum.
    while i <= n {
        let threshold = if i < n { order[i].0 } else { order[n - 1].0 + 1.0 };
        let sens_below = below - insens_below;
        let sens_above = (n - total_insensitive) - sens_below;
        let err_below = fp_cost * sens_below as f64 + (total_insensitive - insens_below) as f64;
        let err_above = fp_cost * sens_above as f64 + insens_below as f64;
        for (err, orient) in [(err_below, true), (err_above, false)] {
            if err < best_err {
                best_err = err;
                best = Stump {
                    feature,
                    threshold,
                    insensitive_below: orient,
                };
            }
        }
        if i == n {
            break;
        }
        let v = order[i].0;
        while i < n && order[i].0 == v {
            if order[i].1 {
                insens_below += 1;
            }
            below += 1;
            i += 1;
        }
    }
    (best_err, best)
}

const STUMP_MAX_FP_COST: f64 = 64.0;

/// Trains the randomized stump committee. Each stump fits the best
/// (feature, threshold, orientation) on a bootstrap resample over a random
/// two-feature subset, under a randomized false-positive cost. The cost
/// spread staggers stump thresholds across the precision range, so the
/// committee's vote count grades from aggressive to conservative and the
/// vote cutoff can realize low false-positive targets.
pub(crate) fn train_stumps(
    samples: &[LabeledSample],
    pdm: f64,
    n_stumps: usize,
    seed: u64,
) -> Vec<Stump> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut stumps = Vec::with_capacity(n_stumps);
    for _ in 0..n_stumps {
        let boot: Vec<&LabeledSample> =
            (0..n).map(|_| &samples[rng.random_range(0..n)]).collect();
        let fp_cost = (rng.random::<f64>() * STUMP_MAX_FP_COST.ln()).exp();
        let first = rng.random_range(0..FeatureId::ALL.len());
        let second = (first + 1 + rng.random_range(0..FeatureId::ALL.len() - 1))
            % FeatureId::ALL.len();
        let mut best: Option<(f64, Stump)> = None;
        for feature in [FeatureId::ALL[first], FeatureId::ALL[second]] {
            let labeled: Vec<(f64, bool)> = boot
                .iter()
                .map(|s| (feature.value(&s.features), s.insensitive(pdm)))
                .collect();
            let (err, stump) = best_split(feature, &labeled, fp_cost);
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, stump));
            }
        }
        stumps.push(best.expect("non-empty candidate set").1);
    }
    stumps
}

/// Smallest vote threshold whose false positives stay within `allowed`,
/// given per-sensitive-sample vote counts.
pub(crate) fn min_votes_for_allowance(
    sensitive_votes: &[u32],
    n_stumps: usize,
    allowed: usize,
) -> u32 {
    let mut at_or_above = vec![0usize; n_stumps + 2];
    for &v in sensitive_votes {
        at_or_above[v as usize] += 1;
    }
    for v in (0..=n_stumps).rev() {
        at_or_above[v] += at_or_above[v + 1];
    }
    (0..=n_stumps as u32 + 1)
        .find(|&v| at_or_above[v as usize] <= allowed)
        .unwrap_or(n_stumps as u32 + 1)
}

/// Trains and calibrates the stump forest at a target false-positive rate.
pub fn calibrate_forest(
    samples: &[LabeledSample],
    pdm: f64,
    target_fp_pct: f64,
    n_stumps: usize,
    seed: u64,
) -> Result<ForestModel, PredictorError> {
    require_samples(samples, 1)?;
    if n_stumps < 16 {
        return Err(PredictorError::Config(format!(
            "forest needs at least 16 stumps, got {n_stumps}"
        )));
    }
    let stumps = train_stumps(samples, pdm, n_stumps, seed);
    let probe = ForestModel {
        stumps,
        min_votes: 0,
    };
    let sensitive_votes: Vec<u32> = samples
        .iter()
        .filter(|s| !s.insensitive(pdm))
        .map(|s| probe.votes(&s.features))
        .collect();
    let allowed = (target_fp_pct / 100.0 * samples.len() as f64).floor() as usize;
    let min_votes = min_votes_for_allowance(&sensitive_votes, n_stumps, allowed);
    Ok(ForestModel {
        stumps: probe.stumps,
        min_votes,
    })
}

/// Achieved (fp%, li%) operating points of a stump committee swept over
/// every vote cutoff.
pub(crate) fn forest_li_points(
    stumps: &[Stump],
    samples: &[LabeledSample],
    pdm: f64,
) -> Vec<(f64, f64)> {
    let probe = ForestModel {
        stumps: stumps.to_vec(),
        min_votes: 0,
    };
    let n = samples.len() as f64;
    let k = stumps.len();
    let mut li_at = vec![0usize; k + 2];
    let mut fp_at = vec![0usize; k + 2];
    for s in samples {
        let v = probe.votes(&s.features) as usize;
        li_at[v] += 1;
        if !s.insensitive(pdm) {
            fp_at[v] += 1;
        }
    }
    // Suffix sums: counts labeled insensitive at vote cutoff v.
    for v in (0..=k).rev() {
        li_at[v] += li_at[v + 1];
        fp_at[v] += fp_at[v + 1];
    }
    (0..=k + 1)
        .map(|v| (100.0 * fp_at[v] as f64 / n, 100.0 * li_at[v] as f64 / n))
        .collect()
}

/// Achieved (false-positive %, labeled-insensitive %) of a model on a sample set.
pub fn measure_rates(
    model: &SensitivityModel,
    samples: &[LabeledSample],
    pdm: f64,
) -> (f64, f64) {
    let n = samples.len().max(1) as f64;
    let mut fp = 0usize;
    let mut li = 0usize;
    for s in samples {
        if model.classify(&s.features) {
            li += 1;
            if !s.insensitive(pdm) {
                fp += 1;
            }
        }
    }
    (100.0 * fp as f64 / n, 100.0 * li as f64 / n)
}
