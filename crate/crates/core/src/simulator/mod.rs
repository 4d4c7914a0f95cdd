//! Discrete-event cluster simulator: tracks per-server and per-pool capacity
//! at second granularity, executes an allocation policy over a VM trace, and
//! emits savings, stranding, and QoS metrics.

mod cluster;
mod engine;
mod event_log;
mod metrics;
mod stranding;
mod sweep;

pub use cluster::{ClusterConfig, Policy, QosConfig};
pub use engine::{run, RunOptions, SimRun};
pub use event_log::EventRecord;
pub use metrics::{BucketStat, OffliningDemand, SimMetrics};
pub use stranding::{measure_stranding, ClusterSnapshot, StrandingSample};
pub use sweep::{compare_policies, sweep_pool_sizes};

use thiserror::Error;

use crate::control_plane::ControlPlaneError;
use crate::pool_hw::PoolHwError;
use crate::predictors::PredictorError;
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cluster or policy configuration: {0}")]
    Config(String),
    #[error("vm {vm_id} cannot fit any server even all-local ({cores} cores, {memory_gb} GB)")]
    InfeasibleCluster {
        vm_id: u64,
        cores: u32,
        memory_gb: u32,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    PoolHw(#[from] PoolHwError),
    #[error(transparent)]
    ControlPlane(#[from] ControlPlaneError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
