//! VM trace data model, trace file IO, and the calibrated synthetic generator.

mod gen;
mod io;

pub use gen::{generate_trace, SlowdownMixture, TraceGenConfig, SLOWDOWN_CLASS_BOUNDS};
pub use io::{read_trace, write_trace, TRACE_HEADER};

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid trace configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace validation failed: {0}")]
    Validation(String),
    #[error("unknown latency scenario: {0}")]
    UnknownScenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type VmId = u64;

/// One VM arrival. `ground_truth` travels with the record but is hidden from
/// allocation policies; predictors only ever see telemetry derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct VmRequest {
    pub vm_id: VmId,
    pub customer_id: String,
    pub vm_type: String,
    /// Seconds since trace start.
    pub arrival: u64,
    /// Seconds; strictly positive.
    pub lifetime: u64,
    pub cores: u32,
    pub memory_gb: u32,
    /// Placement taken from the trace; the simulator falls back when it no
    /// longer fits.
    pub server_hint: Option<u32>,
    pub ground_truth: WorkloadGroundTruth,
}

/// Hidden workload behavior backing a VM: the minimum fraction of memory it
/// never touches over its lifetime, and its slowdown curve per latency
/// scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadGroundTruth {
    pub untouched_fraction: f64,
    /// Scenario name -> slowdown fraction when 100% of memory is pool-backed.
    pub slowdown_full_pool: BTreeMap<String, f64>,
    /// Shape of slowdown vs spill; lower exponents hit earlier.
    pub curve_exponent: f64,
}

impl VmRequest {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.lifetime == 0 {
            return Err(TraceError::Validation(format!(
                "vm {}: lifetime must be > 0",
                self.vm_id
            )));
        }
        if self.cores == 0 || self.memory_gb == 0 {
            return Err(TraceError::Validation(format!(
                "vm {}: cores and memory_gb must be >= 1",
                self.vm_id
            )));
        }
        self.ground_truth.validate().map_err(|e| {
            TraceError::Validation(format!("vm {}: {e}", self.vm_id))
        })
    }
}

impl WorkloadGroundTruth {
    pub fn validate(&self) -> Result<(), TraceError> {
        if !(0.0..=1.0).contains(&self.untouched_fraction) {
            return Err(TraceError::Validation(format!(
                "untouched_fraction {} outside [0,1]",
                self.untouched_fraction
            )));
        }
        if self.curve_exponent <= 0.0 {
            return Err(TraceError::Validation(format!(
                "curve_exponent {} must be positive",
                self.curve_exponent
            )));
        }
        for (name, s) in &self.slowdown_full_pool {
            if *s < 0.0 {
                return Err(TraceError::Validation(format!(
                    "slowdown_full_pool[{name}] = {s} is negative"
                )));
            }
        }
        Ok(())
    }
}

/// Slowdown of a workload with `spill` of its touched memory resident on the
/// pool, under the named latency scenario. Zero at zero spill, continuous and
/// monotone, reaching the full-pool slowdown at spill = 1.
pub fn slowdown_at(
    gt: &WorkloadGroundTruth,
    spill: f64,
    scenario: &str,
) -> Result<f64, TraceError> {
    if !(0.0..=1.0).contains(&spill) {
        return Err(TraceError::Validation(format!(
            "spill {spill} outside [0,1]"
        )));
    }
    let full = gt
        .slowdown_full_pool
        .get(scenario)
        .ok_or_else(|| TraceError::UnknownScenario(scenario.to_string()))?;
    Ok(full * spill.powf(gt.curve_exponent))
}

/// Rounds to six decimal places, the trace file's fraction precision.
pub(crate) fn quantize6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}
