//! Control-plane building blocks: per-VM memory splits, the per-pool ready
//! buffer with asynchronous slice release, server capacity accounting, and
//! the QoS mitigation budget. The simulator's event loop drives these
//! structures; everything here is single-writer.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use thiserror::Error;

use crate::pool_hw::{HostId, PoolHwError, SliceTable};

#[derive(Debug, Error)]
pub enum ControlPlaneError {
    #[error(transparent)]
    PoolHw(#[from] PoolHwError),
    #[error("pool state inconsistent: {0}")]
    Inconsistent(String),
    #[error("unknown vm: {0}")]
    UnknownVm(u64),
}

/// A VM's local/pool allocation. The pool side is the zNUMA node the guest
/// sees; it is whole GBs and backed by specific slices on the host's pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySplit {
    pub local_gb: u32,
    pub pool_gb: u32,
    pub source_slices: Vec<u32>,
}

impl MemorySplit {
    pub fn all_local(memory_gb: u32) -> Self {
        Self {
            local_gb: memory_gb,
            pool_gb: 0,
            source_slices: Vec::new(),
        }
    }

    pub fn validate(&self, memory_gb: u32) -> Result<(), ControlPlaneError> {
        if self.local_gb + self.pool_gb != memory_gb {
            return Err(ControlPlaneError::Inconsistent(format!(
                "split {}+{} != memory_gb {memory_gb}",
                self.local_gb, self.pool_gb
            )));
        }
        if self.source_slices.len() as u32 != self.pool_gb {
            return Err(ControlPlaneError::Inconsistent(format!(
                "{} slices backing {} pool GB",
                self.source_slices.len(),
                self.pool_gb
            )));
        }
        Ok(())
    }
}

/// Fraction of a VM's touched memory that lands on the pool under local-first
/// guest allocation: local DRAM fills before the zNUMA node, so only memory
/// beyond `local_gb` spills.
pub fn znuma_spill(memory_gb: u32, local_gb: u32, untouched_fraction: f64) -> f64 {
    let touched = memory_gb as f64 * (1.0 - untouched_fraction);
    if touched <= local_gb as f64 || touched <= 0.0 {
        0.0
    } else {
        (touched - local_gb as f64) / touched
    }
}

/// One pool's slice state: the permission table plus the set of slices still
/// draining after release. Ready capacity is what scheduling may consume;
/// draining slices become ready when their offline completes.
#[derive(Debug, Clone)]
pub struct PoolState {
    table: SliceTable,
    draining: BTreeSet<u32>,
    /// Ready-buffer target; dips below it are reported, not enforced.
    pub target_ready: u32,
}

impl PoolState {
    pub fn new(n_slices: u32, n_hosts: u16, target_ready: u32) -> Result<Self, ControlPlaneError> {
        Ok(Self {
            table: SliceTable::new(n_slices, n_hosts)?,
            draining: BTreeSet::new(),
            target_ready,
        })
    }

    pub fn n_slices(&self) -> u32 {
        self.table.n_slices()
    }

    pub fn assigned_count(&self) -> u32 {
        self.table.assigned_count()
    }

    pub fn draining_count(&self) -> u32 {
        self.draining.len() as u32
    }

    pub fn ready_count(&self) -> u32 {
        self.table.free_count() - self.draining_count()
    }

    /// Slices that are physically occupied: assigned to hosts or not yet
    /// offlined. This is what pool provisioning must cover.
    pub fn occupied_count(&self) -> u32 {
        self.assigned_count() + self.draining_count()
    }

    pub fn table(&self) -> &SliceTable {
        &self.table
    }

    /// Grants up to `want` ready slices to a host, lowest index first.
    /// Never touches draining slices, so granting cannot wait on offlining.
    pub fn grant(&mut self, host: HostId, want: u32) -> Result<Vec<u32>, ControlPlaneError> {
        let take = want.min(self.ready_count());
        let mut picked = Vec::with_capacity(take as usize);
        for slice in self.table.free_slices() {
            if picked.len() as u32 == take {
                break;
            }
            if !self.draining.contains(&slice) {
                picked.push(slice);
            }
        }
        self.table.assign_specific(host, &picked)?;
        Ok(picked)
    }

    /// Releases a host's slices into the draining state. They stay
    /// unavailable until `complete_drain`.
    pub fn release_to_drain(&mut self, host: HostId, slices: &[u32]) -> Result<(), ControlPlaneError> {
        self.table.release_slices(host, slices)?;
        for &s in slices {
            self.draining.insert(s);
        }
        Ok(())
    }

    pub fn complete_drain(&mut self, slice: u32) -> Result<(), ControlPlaneError> {
        if !self.draining.remove(&slice) {
            return Err(ControlPlaneError::Inconsistent(format!(
                "slice {slice} completed a drain it never started"
            )));
        }
        Ok(())
    }

    /// Conservation: ready + draining + assigned covers every slice exactly
    /// once, and draining slices are unassigned.
    pub fn verify_conservation(&self) -> Result<(), ControlPlaneError> {
        self.table.verify_consistency()?;
        if self.ready_count() + self.draining_count() + self.assigned_count() != self.n_slices() {
            return Err(ControlPlaneError::Inconsistent(
                "ready + draining + assigned != total".into(),
            ));
        }
        for &s in &self.draining {
            if self.table.owner_of(s)?.is_some() {
                return Err(ControlPlaneError::Inconsistent(format!(
                    "draining slice {s} still owned"
                )));
            }
        }
        Ok(())
    }
}

/// Per-server capacity accounting.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub cores: u32,
    pub local_gb: u32,
    pub free_cores: u32,
    pub free_local_gb: u32,
}

impl ServerState {
    pub fn new(cores: u32, local_gb: u32) -> Self {
        Self {
            cores,
            local_gb,
            free_cores: cores,
            free_local_gb: local_gb,
        }
    }

    pub fn fits(&self, cores: u32, local_gb: u32) -> bool {
        self.free_cores >= cores && self.free_local_gb >= local_gb
    }

    pub fn reserve(&mut self, cores: u32, local_gb: u32) {
        debug_assert!(self.fits(cores, local_gb));
        self.free_cores -= cores;
        self.free_local_gb -= local_gb;
    }

    pub fn release(&mut self, cores: u32, local_gb: u32) {
        self.free_cores = (self.free_cores + cores).min(self.cores);
        self.free_local_gb = (self.free_local_gb + local_gb).min(self.local_gb);
    }

    pub fn used_local_gb(&self) -> u32 {
        self.local_gb - self.free_local_gb
    }

    pub fn used_cores(&self) -> u32 {
        self.cores - self.free_cores
    }
}

/// Rolling-window mitigation budget: at most `budget_frac` of the window's
/// VM population may be migrated per window.
#[derive(Debug, Clone)]
pub struct QosWindow {
    window_ms: u64,
    budget_frac: f64,
    recent: VecDeque<u64>,
}

impl QosWindow {
    pub fn new(window_ms: u64, budget_frac: f64) -> Self {
        Self {
            window_ms,
            budget_frac,
            recent: VecDeque::new(),
        }
    }

    fn prune(&mut self, now_ms: u64) {
        while self
            .recent
            .front()
            .is_some_and(|&t| t + self.window_ms <= now_ms)
        {
            self.recent.pop_front();
        }
    }

    pub fn migrations_in_window(&mut self, now_ms: u64) -> usize {
        self.prune(now_ms);
        self.recent.len()
    }

    pub fn budget(&self, window_population: usize) -> usize {
        (self.budget_frac * window_population as f64).floor() as usize
    }

    pub fn can_migrate(&mut self, now_ms: u64, window_population: usize) -> bool {
        self.migrations_in_window(now_ms) < self.budget(window_population)
    }

    pub fn record_migration(&mut self, now_ms: u64) {
        self.recent.push_back(now_ms);
    }
}
