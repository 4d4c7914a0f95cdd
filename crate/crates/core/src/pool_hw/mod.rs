//! Pool hardware model: the external memory controller's slice-ownership
//! permission table, pool topology and access-latency figures, and the
//! online/offline timing constants used by the simulator.

mod latency;
mod slice_table;
mod timing;

pub use latency::{pool_latency_ns, LatencyScenario, PoolTopology};
pub use slice_table::{state_bytes, AccessVerdict, HostId, SliceTable, SNAPSHOT_HEADER_BYTES};
pub use timing::TimingModel;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoolHwError {
    #[error("capacity exhausted: requested {requested} slices, {available} unassigned")]
    CapacityExhausted { requested: u32, available: u32 },
    #[error("slice {slice} is not owned by host {host} (owner: {owner:?})")]
    OwnershipViolation {
        slice: u32,
        host: HostId,
        owner: Option<HostId>,
    },
    #[error("slice index {slice} out of range (table has {n_slices} slices)")]
    SliceOutOfRange { slice: u32, n_slices: u32 },
    #[error("host id {host} out of range (table has {n_hosts} hosts)")]
    HostOutOfRange { host: HostId, n_hosts: u16 },
    #[error("invalid pool configuration: {0}")]
    Config(String),
}
