//! Line-oriented event log shared by the control plane and simulator. Every
//! schedule/exit/drain/migrate event carries a timestamp so replay oracles
//! and log scans can verify run invariants.

use std::fmt;

/// One logged simulator event. Times are simulated milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub enum EventRecord {
    Schedule {
        t_ms: u64,
        vm: u64,
        server: u32,
        cores: u32,
        local_gb: u32,
        pool_gb: u32,
        want_pool_gb: u32,
        ready_before: u32,
        touched_gb: f64,
        slowdown: f64,
        moved: bool,
    },
    Block {
        t_ms: u64,
        vm: u64,
    },
    Exit {
        t_ms: u64,
        vm: u64,
        slowdown: f64,
        violated: bool,
        mitigated: bool,
    },
    DrainStart {
        t_ms: u64,
        vm: u64,
        pool: u32,
        slices: u32,
    },
    DrainComplete {
        t_ms: u64,
        pool: u32,
        slice: u32,
    },
    MigrateStart {
        t_ms: u64,
        vm: u64,
        pool_gb: u32,
        done_ms: u64,
    },
    MigrateDone {
        t_ms: u64,
        vm: u64,
    },
    Defer {
        t_ms: u64,
        vm: u64,
        reason: &'static str,
    },
}

impl EventRecord {
    pub fn t_ms(&self) -> u64 {
        match self {
            EventRecord::Schedule { t_ms, .. }
            | EventRecord::Block { t_ms, .. }
            | EventRecord::Exit { t_ms, .. }
            | EventRecord::DrainStart { t_ms, .. }
            | EventRecord::DrainComplete { t_ms, .. }
            | EventRecord::MigrateStart { t_ms, .. }
            | EventRecord::MigrateDone { t_ms, .. }
            | EventRecord::Defer { t_ms, .. } => *t_ms,
        }
    }
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventRecord::Schedule {
                t_ms,
                vm,
                server,
                cores,
                local_gb,
                pool_gb,
                want_pool_gb,
                ready_before,
                touched_gb,
                slowdown,
                moved,
            } => write!(
                f,
                "t={t_ms} ev=schedule vm={vm} server={server} cores={cores} local_gb={local_gb} \
                 pool_gb={pool_gb} want_pool_gb={want_pool_gb} ready_before={ready_before} \
                 touched_gb={touched_gb:.3} slowdown={slowdown:.6} moved={moved}"
            ),
            EventRecord::Block { t_ms, vm } => write!(f, "t={t_ms} ev=block vm={vm}"),
            EventRecord::Exit {
                t_ms,
                vm,
                slowdown,
                violated,
                mitigated,
            } => write!(
                f,
                "t={t_ms} ev=exit vm={vm} slowdown={slowdown:.6} violated={violated} mitigated={mitigated}"
            ),
            EventRecord::DrainStart {
                t_ms,
                vm,
                pool,
                slices,
            } => write!(f, "t={t_ms} ev=drain_start vm={vm} pool={pool} slices={slices}"),
            EventRecord::DrainComplete { t_ms, pool, slice } => {
                write!(f, "t={t_ms} ev=drain_complete pool={pool} slice={slice}")
            }
            EventRecord::MigrateStart {
                t_ms,
                vm,
                pool_gb,
                done_ms,
            } => write!(
                f,
                "t={t_ms} ev=migrate_start vm={vm} pool_gb={pool_gb} done={done_ms}"
            ),
            EventRecord::MigrateDone { t_ms, vm } => {
                write!(f, "t={t_ms} ev=migrate_done vm={vm}")
            }
            EventRecord::Defer { t_ms, vm, reason } => {
                write!(f, "t={t_ms} ev=defer vm={vm} reason={reason}")
            }
        }
    }
}
