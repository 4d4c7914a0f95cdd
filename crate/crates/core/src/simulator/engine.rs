//! The deterministic event loop. Events at equal timestamps process in a
//! fixed kind order (drain-complete, migration-done, exit, day-boundary,
//! arrival, qos-tick, snapshot) with a sequence number as the final tie
//! breaker, so a (trace, cluster, policy, seed) tuple always replays to the
//! same metrics.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::control_plane::{znuma_spill, PoolState, QosWindow, ServerState};
use crate::predictors::{ModelSnapshot, PondModels, UntouchedHistory};
use crate::trace::{slowdown_at, VmRequest};

use super::cluster::{ClusterConfig, Policy};
use super::event_log::EventRecord;
use super::metrics::{BucketStat, OffliningDemand, SimMetrics};
use super::stranding::{measure_stranding, ClusterSnapshot};
use super::SimError;

const MS_PER_SEC: u64 = 1000;
const SECONDS_PER_DAY: u64 = 86_400;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Calibrated models; required for prediction-driven policies.
    pub models: Option<ModelSnapshot>,
    pub collect_event_log: bool,
    /// Verify pool and server conservation at event boundaries.
    pub check_invariants: bool,
    /// Precomputed all-local baseline (sum of per-server local peaks),
    /// letting sweeps share one baseline run.
    pub baseline_total_gb: Option<f64>,
}

#[derive(Debug)]
pub struct SimRun {
    pub metrics: SimMetrics,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    DrainComplete { pool: u32, slice: u32 },
    MigrationDone { vm: u64 },
    Exit { vm: u64 },
    DayBoundary { day: u32 },
    Arrival { idx: usize },
    QosTick,
    Snapshot,
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::DrainComplete { .. } => 0,
            EventKind::MigrationDone { .. } => 1,
            EventKind::Exit { .. } => 2,
            EventKind::DayBoundary { .. } => 3,
            EventKind::Arrival { .. } => 4,
            EventKind::QosTick => 5,
            EventKind::Snapshot => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct EventKey {
    t_ms: u64,
    prio: u8,
    seq: u64,
}

struct VmState {
    idx: usize,
    server: u32,
    pool: u32,
    start_ms: u64,
    local_gb: u32,
    pool_gb: u32,
    slices: Vec<u32>,
    spill: f64,
    slowdown: f64,
    /// Monitored slowdown estimate: true slowdown plus one persistent
    /// observation-noise draw.
    monitored: f64,
    violated: bool,
    mitigated: bool,
    migration_pending: bool,
    migration_reserved_gb: u32,
    deferred_once: bool,
}

struct PondRuntime {
    models: PondModels,
    history: UntouchedHistory,
    /// Completed-VM untouched observations awaiting the nightly ingest.
    pending_obs: Vec<(String, f64, u32)>,
}

struct Engine<'a> {
    trace: &'a [VmRequest],
    cluster: &'a ClusterConfig,
    policy: &'a Policy,
    seed: u64,
    opts: &'a RunOptions,
    pdm: f64,
    horizon_ms: u64,

    rng: ChaCha12Rng,
    heap: BinaryHeap<Reverse<(EventKey, EventKind)>>,
    seq: u64,
    servers: Vec<ServerState>,
    pools: Vec<PoolState>,
    vms: HashMap<u64, VmState>,
    spilled: BTreeSet<u64>,
    qos_window: QosWindow,
    pond: Option<PondRuntime>,

    events: Vec<EventRecord>,
    /// Per-server all-local usage had every VM run at its trace hint.
    ref_usage: Vec<i64>,
    /// Running maximum of the reference; the balanced-placement cap scales
    /// this so per-server local peaks stay within the share-scaled peaks of
    /// the all-local baseline.
    ref_peak: Vec<i64>,
    ref_group: Vec<i64>,
    ref_group_peak: Vec<i64>,
    sched_total_gb: f64,
    sched_pool_gb: f64,
    peak_local: Vec<u64>,
    peak_pool: Vec<u64>,
    scheduled: u64,
    blocked: u64,
    moved: u64,
    violations: u64,
    unmitigated_violations: u64,
    migrations: u64,
    deferred_vms: u64,
    demand_samples: Vec<f64>,
    stranding_acc: BTreeMap<u32, (f64, u64)>,
    pool_gbsec: f64,
    total_gbsec: f64,
    cluster_local_usage: i64,
    cluster_local_peak: i64,
    traffic_sum_pct: f64,
    traffic_count: u64,
}

/// Executes one policy over a trace. The trace must be sorted by arrival and
/// every VM must fit at least one (empty) server all-locally.
pub fn run(
    trace: &[VmRequest],
    cluster: &ClusterConfig,
    policy: &Policy,
    seed: u64,
    opts: &RunOptions,
) -> Result<SimRun, SimError> {
    cluster.validate()?;
    policy.validate()?;
    prevalidate(trace, cluster, policy)?;

    let pond = match policy {
        Policy::Pond { combined, classifier } => {
            let snapshot = opts.models.as_ref().ok_or_else(|| {
                SimError::Config("prediction-driven policy requires a model snapshot".into())
            })?;
            let models = snapshot.instantiate(&cluster.scenario, combined, *classifier)?;
            Some(PondRuntime {
                models,
                history: snapshot.history.clone(),
                pending_obs: Vec::new(),
            })
        }
        _ => None,
    };

    let horizon_ms = trace
        .iter()
        .map(|vm| (vm.arrival + vm.lifetime) * MS_PER_SEC)
        .max()
        .unwrap_or(0);

    let mut engine = Engine {
        trace,
        cluster,
        policy,
        seed,
        opts,
        pdm: policy.pdm(&cluster.qos),
        horizon_ms,
        rng: ChaCha12Rng::seed_from_u64(seed),
        heap: BinaryHeap::new(),
        seq: 0,
        servers: (0..cluster.total_servers())
            .map(|_| ServerState::new(cluster.cores_per_server, cluster.local_dram_gb_per_server))
            .collect(),
        pools: (0..cluster.total_pools())
            .map(|_| {
                PoolState::new(
                    cluster.pool_slices_per_group(),
                    cluster.pool_sockets as u16,
                    cluster.effective_buffer_target(),
                )
            })
            .collect::<Result<_, _>>()?,
        vms: HashMap::new(),
        spilled: BTreeSet::new(),
        qos_window: QosWindow::new(
            cluster.qos.window_secs * MS_PER_SEC,
            cluster.qos.mitigation_budget_frac,
        ),
        pond,
        events: Vec::new(),
        ref_usage: vec![0; cluster.total_servers() as usize],
        ref_peak: vec![0; cluster.total_servers() as usize],
        ref_group: vec![0; cluster.total_pools() as usize],
        ref_group_peak: vec![0; cluster.total_pools() as usize],
        sched_total_gb: 0.0,
        sched_pool_gb: 0.0,
        peak_local: vec![0; cluster.total_servers() as usize],
        peak_pool: vec![0; cluster.total_pools() as usize],
        scheduled: 0,
        blocked: 0,
        moved: 0,
        violations: 0,
        unmitigated_violations: 0,
        migrations: 0,
        deferred_vms: 0,
        demand_samples: Vec::with_capacity(trace.len()),
        stranding_acc: BTreeMap::new(),
        pool_gbsec: 0.0,
        total_gbsec: 0.0,
        cluster_local_usage: 0,
        cluster_local_peak: 0,
        traffic_sum_pct: 0.0,
        traffic_count: 0,
    };
    engine.seed_events();
    engine.event_loop()?;
    engine.finalize()
}

fn prevalidate(
    trace: &[VmRequest],
    cluster: &ClusterConfig,
    policy: &Policy,
) -> Result<(), SimError> {
    let mut last_arrival = 0;
    for vm in trace {
        vm.validate()?;
        if vm.arrival < last_arrival {
            return Err(SimError::Config(format!(
                "trace not sorted by arrival at vm {}",
                vm.vm_id
            )));
        }
        last_arrival = vm.arrival;
        if vm.cores > cluster.cores_per_server || vm.memory_gb > cluster.local_dram_gb_per_server {
            return Err(SimError::InfeasibleCluster {
                vm_id: vm.vm_id,
                cores: vm.cores,
                memory_gb: vm.memory_gb,
            });
        }
        if !vm
            .ground_truth
            .slowdown_full_pool
            .contains_key(&cluster.scenario)
        {
            return Err(SimError::Config(format!(
                "vm {} has no slowdown entry for scenario {} (policy {})",
                vm.vm_id,
                cluster.scenario,
                policy.label()
            )));
        }
    }
    Ok(())
}

impl Engine<'_> {
    fn push(&mut self, t_ms: u64, kind: EventKind) {
        let key = EventKey {
            t_ms,
            prio: kind.priority(),
            seq: self.seq,
        };
        self.seq += 1;
        self.heap.push(Reverse((key, kind)));
    }

    fn log(&mut self, record: EventRecord) {
        if self.opts.collect_event_log {
            self.events.push(record);
        }
    }

    fn is_pond(&self) -> bool {
        self.pond.is_some()
    }

    fn gaussian(&mut self) -> f64 {
        let (a, b): (f64, f64) = (self.rng.random(), self.rng.random());
        (-2.0 * a.max(1e-12).ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos()
    }

    fn seed_events(&mut self) {
        for (idx, vm) in self.trace.iter().enumerate() {
            self.push(vm.arrival * MS_PER_SEC, EventKind::Arrival { idx });
        }
        if self.horizon_ms == 0 {
            return;
        }
        let snap = self.cluster.snapshot_interval_secs * MS_PER_SEC;
        self.push(snap, EventKind::Snapshot);
        if self.is_pond() {
            self.push(self.cluster.qos.tick_secs * MS_PER_SEC, EventKind::QosTick);
            let days = self.horizon_ms / (SECONDS_PER_DAY * MS_PER_SEC);
            for day in 1..=days {
                self.push(
                    day * SECONDS_PER_DAY * MS_PER_SEC,
                    EventKind::DayBoundary { day: day as u32 },
                );
            }
        }
    }

    fn event_loop(&mut self) -> Result<(), SimError> {
        while let Some(Reverse((key, kind))) = self.heap.pop() {
            match kind {
                EventKind::DrainComplete { pool, slice } => {
                    self.pools[pool as usize].complete_drain(slice)?;
                    self.log(EventRecord::DrainComplete {
                        t_ms: key.t_ms,
                        pool,
                        slice,
                    });
                }
                EventKind::MigrationDone { vm } => self.on_migration_done(key.t_ms, vm)?,
                EventKind::Exit { vm } => self.on_vm_exit(key.t_ms, vm)?,
                EventKind::DayBoundary { day } => self.on_day_boundary(day),
                EventKind::Arrival { idx } => self.schedule_vm(key.t_ms, idx)?,
                EventKind::QosTick => self.qos_tick(key.t_ms)?,
                EventKind::Snapshot => self.on_snapshot(key.t_ms),
            }
            if self.opts.check_invariants {
                self.verify_invariants()?;
            }
        }
        Ok(())
    }

    /// Workflow A: split decision from the models, placement from the trace
    /// hint with first-fit fallback, pool grant capped by ready slices.
    fn schedule_vm(&mut self, now_ms: u64, idx: usize) -> Result<(), SimError> {
        let req = &self.trace[idx];
        let mem = req.memory_gb;
        let want_pool = match self.policy {
            Policy::AllLocal => 0,
            Policy::StaticPool { fraction } => ((fraction * mem as f64).floor() as u32).min(mem),
            Policy::Pond { .. } => {
                let pond = self.pond.as_ref().expect("pond runtime");
                let features = crate::predictors::synthesize_features(
                    &req.ground_truth,
                    req.vm_id,
                    pond.models.feature_salt,
                );
                if pond.history.has_history(&req.customer_id)
                    && pond.models.classifier.classify(&features)
                {
                    mem
                } else {
                    let um = pond
                        .history
                        .predict(&req.customer_id, pond.models.um_target_pct);
                    ((um * mem as f64).floor() as u32).min(mem)
                }
            }
        };

        // Candidate order: trace hint first, then first-fit by server id
        // within the hint's cluster; hintless VMs scan every server. The
        // first pass also holds each server to its balanced local-usage cap
        // (the extra packing dimension pool-aware scheduling adds); a second
        // pass ignores the cap so balancing can re-route but never block.
        let total = self.cluster.total_servers();
        let hint = req.server_hint.filter(|&s| s < total);
        if let Some(h) = hint {
            self.ref_usage[h as usize] += mem as i64;
            self.ref_peak[h as usize] = self.ref_peak[h as usize].max(self.ref_usage[h as usize]);
            let g = self.cluster.pool_of_server(h) as usize;
            self.ref_group[g] += mem as i64;
            self.ref_group_peak[g] = self.ref_group_peak[g].max(self.ref_group[g]);
        }
        let (lo, hi) = match hint {
            Some(h) => {
                let c = self.cluster.cluster_of_server(h);
                (
                    c * self.cluster.servers_per_cluster,
                    (c + 1) * self.cluster.servers_per_cluster,
                )
            }
            None => (0, total),
        };
        let local_share_est = if self.sched_total_gb >= 2048.0 {
            1.0 - self.sched_pool_gb / self.sched_total_gb
        } else {
            1.0
        };
        let balance_cap = |eng: &Self, server: u32| -> i64 {
            ((1.0 + eng.cluster.balance_slack)
                * local_share_est
                * eng.ref_peak[server as usize] as f64) as i64
        };
        let pool_cap = |eng: &Self, group: u32| -> i64 {
            ((1.0 + eng.cluster.pool_balance_slack)
                * (1.0 - local_share_est)
                * eng.ref_group_peak[group as usize] as f64) as i64
        };

        let mut placement = None;
        for balanced in [true, false] {
            let candidates = hint
                .into_iter()
                .chain((lo..hi).filter(|&s| Some(s) != hint));
            for server in candidates {
                let pool = self.cluster.pool_of_server(server);
                let ready = self.pools[pool as usize].ready_count();
                let granted = want_pool.min(ready);
                let local_needed = mem - granted;
                if !self.servers[server as usize].fits(req.cores, local_needed) {
                    continue;
                }
                if balanced && local_share_est < 0.999 {
                    if self.servers[server as usize].used_local_gb() as i64
                        > balance_cap(self, server)
                    {
                        continue;
                    }
                    if (self.pools[pool as usize].occupied_count() + granted) as i64
                        > pool_cap(self, pool)
                    {
                        continue;
                    }
                }
                placement = Some((server, pool, ready, granted, local_needed));
                break;
            }
            if placement.is_some() {
                break;
            }
        }
        let Some((server, pool, ready_before, pool_gb, local_gb)) = placement else {
            self.blocked += 1;
            if let Some(h) = hint {
                self.ref_usage[h as usize] -= mem as i64;
                self.ref_group[self.cluster.pool_of_server(h) as usize] -= mem as i64;
            }
            self.log(EventRecord::Block {
                t_ms: now_ms,
                vm: req.vm_id,
            });
            return Ok(());
        };
        self.sched_total_gb += mem as f64;
        self.sched_pool_gb += pool_gb as f64;

        self.servers[server as usize].reserve(req.cores, local_gb);
        let host = self.cluster.host_on_pool(server);
        let slices = self.pools[pool as usize].grant(host, pool_gb)?;
        debug_assert_eq!(slices.len() as u32, pool_gb);

        let untouched = req.ground_truth.untouched_fraction;
        let spill = znuma_spill(mem, local_gb, untouched);
        let slowdown = slowdown_at(&req.ground_truth, spill, &self.cluster.scenario)?;
        let monitored = if self.is_pond() && spill > 0.0 {
            slowdown + self.gaussian() * self.cluster.qos.monitor_noise_sd
        } else {
            slowdown
        };
        let violated = slowdown > self.pdm;
        let touched_gb = mem as f64 * (1.0 - untouched);

        self.scheduled += 1;
        if hint != Some(server) {
            self.moved += 1;
        }
        if violated {
            self.violations += 1;
        }
        // Implied offlining demand: pool GB wanted beyond ready capacity,
        // over the one-second accounting window.
        self.demand_samples
            .push((want_pool - pool_gb) as f64);
        if pool_gb > 0 {
            let traffic = if spill > 0.0 {
                100.0 * spill * touched_gb / mem as f64
            } else {
                self.cluster.qos.residual_pool_traffic_pct
            };
            self.traffic_sum_pct += traffic;
            self.traffic_count += 1;
        }

        self.peak_local[server as usize] = self.peak_local[server as usize]
            .max(self.servers[server as usize].used_local_gb() as u64);
        self.peak_pool[pool as usize] = self.peak_pool[pool as usize]
            .max(self.pools[pool as usize].occupied_count() as u64);
        self.cluster_local_usage += local_gb as i64;
        self.cluster_local_peak = self.cluster_local_peak.max(self.cluster_local_usage);

        if spill > 0.0 {
            self.spilled.insert(req.vm_id);
        }
        self.vms.insert(
            req.vm_id,
            VmState {
                idx,
                server,
                pool,
                start_ms: now_ms,
                local_gb,
                pool_gb,
                slices,
                spill,
                slowdown,
                monitored,
                violated,
                mitigated: false,
                migration_pending: false,
                migration_reserved_gb: 0,
                deferred_once: false,
            },
        );
        self.push(now_ms + req.lifetime * MS_PER_SEC, EventKind::Exit { vm: req.vm_id });
        self.log(EventRecord::Schedule {
            t_ms: now_ms,
            vm: req.vm_id,
            server,
            cores: req.cores,
            local_gb,
            pool_gb,
            want_pool_gb: want_pool,
            ready_before,
            touched_gb,
            slowdown,
            moved: hint != Some(server),
        });
        Ok(())
    }

    /// Local DRAM frees immediately; pool slices release asynchronously and
    /// drain for 10-100ms per GB each before becoming ready again.
    fn on_vm_exit(&mut self, now_ms: u64, vm_id: u64) -> Result<(), SimError> {
        let vm = self
            .vms
            .remove(&vm_id)
            .ok_or_else(|| SimError::Config(format!("exit for unknown vm {vm_id}")))?;
        let req = &self.trace[vm.idx];
        self.spilled.remove(&vm_id);

        self.servers[vm.server as usize].release(
            req.cores,
            vm.local_gb + vm.migration_reserved_gb,
        );
        self.cluster_local_usage -= (vm.local_gb + vm.migration_reserved_gb) as i64;
        if let Some(h) = req.server_hint.filter(|&s| s < self.cluster.total_servers()) {
            self.ref_usage[h as usize] -= req.memory_gb as i64;
            self.ref_group[self.cluster.pool_of_server(h) as usize] -= req.memory_gb as i64;
        }
        let life_sec = ((now_ms - vm.start_ms) / MS_PER_SEC) as f64;
        self.total_gbsec += req.memory_gb as f64 * life_sec;
        self.pool_gbsec += vm.pool_gb as f64 * life_sec;
        if vm.violated && !vm.mitigated {
            self.unmitigated_violations += 1;
        }

        if !vm.slices.is_empty() {
            let host = self.cluster.host_on_pool(vm.server);
            self.start_drains(now_ms, vm_id, vm.pool, host, &vm.slices)?;
        }
        if self.is_pond() {
            let day = (now_ms / (SECONDS_PER_DAY * MS_PER_SEC)) as u32;
            self.pond.as_mut().unwrap().pending_obs.push((
                req.customer_id.clone(),
                req.ground_truth.untouched_fraction,
                day,
            ));
        }
        self.log(EventRecord::Exit {
            t_ms: now_ms,
            vm: vm_id,
            slowdown: vm.slowdown,
            violated: vm.violated,
            mitigated: vm.mitigated,
        });
        Ok(())
    }

    fn start_drains(
        &mut self,
        now_ms: u64,
        vm_id: u64,
        pool: u32,
        host: u16,
        slices: &[u32],
    ) -> Result<(), SimError> {
        self.pools[pool as usize].release_to_drain(host, slices)?;
        // Slices drain independently, each at its own sampled offline cost.
        for &slice in slices {
            let ms = self.cluster.timing.sample_offline_ms(&mut self.rng).ceil() as u64;
            self.push(now_ms + ms, EventKind::DrainComplete { pool, slice });
        }
        self.log(EventRecord::DrainStart {
            t_ms: now_ms,
            vm: vm_id,
            pool,
            slices: slices.len() as u32,
        });
        Ok(())
    }

    /// Workflow B: for spilled VMs whose monitored slowdown exceeds the
    /// margin, trigger a one-time migration to all-local memory, bounded by
    /// the rolling mitigation budget and the host's free local DRAM.
    fn qos_tick(&mut self, now_ms: u64) -> Result<(), SimError> {
        let active = self.vms.len();
        let candidates: Vec<u64> = self.spilled.iter().copied().collect();
        for vm_id in candidates {
            let Some(vm) = self.vms.get(&vm_id) else { continue };
            if vm.mitigated || vm.migration_pending {
                continue;
            }
            if vm.monitored <= self.pdm {
                continue;
            }
            let vm = self.vms.get_mut(&vm_id).unwrap();
            let pool_gb = vm.pool_gb;
            let server = vm.server as usize;
            if !self.qos_window.can_migrate(now_ms, active) {
                if !vm.deferred_once {
                    vm.deferred_once = true;
                    self.deferred_vms += 1;
                }
                self.log(EventRecord::Defer {
                    t_ms: now_ms,
                    vm: vm_id,
                    reason: "budget",
                });
                continue;
            }
            if self.servers[server].free_local_gb < pool_gb {
                if !vm.deferred_once {
                    vm.deferred_once = true;
                    self.deferred_vms += 1;
                }
                self.log(EventRecord::Defer {
                    t_ms: now_ms,
                    vm: vm_id,
                    reason: "no_local_dram",
                });
                continue;
            }
            self.servers[server].reserve(0, pool_gb);
            self.cluster_local_usage += pool_gb as i64;
            self.cluster_local_peak = self.cluster_local_peak.max(self.cluster_local_usage);
            vm.migration_pending = true;
            vm.migration_reserved_gb = pool_gb;
            self.qos_window.record_migration(now_ms);
            self.migrations += 1;
            let done_ms = now_ms + self.cluster.timing.migration_ms(pool_gb).ceil() as u64;
            self.peak_local[server] =
                self.peak_local[server].max(self.servers[server].used_local_gb() as u64);
            self.push(done_ms, EventKind::MigrationDone { vm: vm_id });
            self.log(EventRecord::MigrateStart {
                t_ms: now_ms,
                vm: vm_id,
                pool_gb,
                done_ms,
            });
        }
        let next = now_ms + self.cluster.qos.tick_secs * MS_PER_SEC;
        if next <= self.horizon_ms {
            self.push(next, EventKind::QosTick);
        }
        Ok(())
    }

    /// One-time reconfiguration: after the copy the VM is all-local and its
    /// pool slices drain back to the buffer.
    fn on_migration_done(&mut self, now_ms: u64, vm_id: u64) -> Result<(), SimError> {
        let Some(vm) = self.vms.get_mut(&vm_id) else {
            // The VM exited while its copy was in flight; its release path
            // already returned all capacity.
            return Ok(());
        };
        let pool = vm.pool;
        let pool_gb = vm.pool_gb;
        let host = self.cluster.host_on_pool(vm.server);
        let slices = std::mem::take(&mut vm.slices);
        let life_sec = ((now_ms - vm.start_ms) / MS_PER_SEC) as f64;
        self.pool_gbsec += pool_gb as f64 * life_sec;

        vm.local_gb += pool_gb;
        vm.pool_gb = 0;
        vm.spill = 0.0;
        vm.slowdown = 0.0;
        vm.monitored = 0.0;
        vm.mitigated = true;
        vm.migration_pending = false;
        vm.migration_reserved_gb = 0;
        self.spilled.remove(&vm_id);

        if !slices.is_empty() {
            self.start_drains(now_ms, vm_id, pool, host, &slices)?;
        }
        self.log(EventRecord::MigrateDone {
            t_ms: now_ms,
            vm: vm_id,
        });
        Ok(())
    }

    /// Nightly model refresh: the day's completed-VM untouched observations
    /// join the per-customer histories before the day's arrivals.
    fn on_day_boundary(&mut self, day: u32) {
        let Some(pond) = self.pond.as_mut() else { return };
        let pending = std::mem::take(&mut pond.pending_obs);
        let mut by_day: BTreeMap<u32, Vec<(String, f64)>> = BTreeMap::new();
        for (customer, value, obs_day) in pending {
            by_day.entry(obs_day).or_default().push((customer, value));
        }
        for (obs_day, batch) in by_day {
            pond.history
                .ingest_batch(obs_day, batch.iter().map(|(c, v)| (c.as_str(), *v)));
        }
        pond.history.ingest_batch(day, std::iter::empty());
    }

    fn on_snapshot(&mut self, now_ms: u64) {
        let sample = measure_stranding(&ClusterSnapshot::from_servers(&self.servers));
        let entry = self.stranding_acc.entry(sample.core_bucket_pct).or_default();
        entry.0 += sample.stranded_pct;
        entry.1 += 1;
        let next = now_ms + self.cluster.snapshot_interval_secs * MS_PER_SEC;
        if next <= self.horizon_ms {
            self.push(next, EventKind::Snapshot);
        }
    }

    fn verify_invariants(&self) -> Result<(), SimError> {
        for pool in &self.pools {
            pool.verify_conservation()?;
        }
        let mut used_local = vec![0u64; self.servers.len()];
        let mut used_cores = vec![0u64; self.servers.len()];
        for vm in self.vms.values() {
            let req = &self.trace[vm.idx];
            used_local[vm.server as usize] +=
                (vm.local_gb + vm.migration_reserved_gb) as u64;
            used_cores[vm.server as usize] += req.cores as u64;
        }
        for (i, s) in self.servers.iter().enumerate() {
            if s.used_local_gb() as u64 != used_local[i] || s.used_cores() as u64 != used_cores[i]
            {
                return Err(SimError::Config(format!(
                    "server {i} accounting drift: used {}GB/{} cores vs vm sum {}GB/{} cores",
                    s.used_local_gb(),
                    s.used_cores(),
                    used_local[i],
                    used_cores[i]
                )));
            }
        }
        Ok(())
    }

    fn finalize(mut self) -> Result<SimRun, SimError> {
        let local_total: u64 = self.peak_local.iter().sum();
        let pool_total: u64 = self.peak_pool.iter().sum();
        let baseline = match self.opts.baseline_total_gb {
            Some(b) => b,
            None => match self.policy {
                Policy::AllLocal => local_total as f64,
                _ => {
                    let base_opts = RunOptions::default();
                    run(self.trace, self.cluster, &Policy::AllLocal, self.seed, &base_opts)?
                        .metrics
                        .local_peak_gb
                }
            },
        };
        let total = local_total as f64 + pool_total as f64;
        let savings = if baseline > 0.0 {
            100.0 * (1.0 - total / baseline)
        } else {
            0.0
        };
        let scheduled = self.scheduled.max(1) as f64;
        let (fp_star, op_star) = match &self.pond {
            Some(p) => (
                Some(p.models.solution.fp_pct),
                Some(p.models.solution.op_pct),
            ),
            None => (None, None),
        };
        let duration_sec = (self.horizon_ms / MS_PER_SEC).max(1) as f64;
        let metrics = SimMetrics {
            policy: self.policy.label(),
            scenario: self.cluster.scenario.clone(),
            pool_sockets: self.cluster.pool_sockets,
            seed: self.seed,
            vm_count: self.trace.len() as u64,
            scheduled_vms: self.scheduled,
            blocked_vms: self.blocked,
            moved_vms: self.moved,
            baseline_peak_gb: baseline,
            local_peak_gb: local_total as f64,
            pool_peak_gb: pool_total as f64,
            cluster_local_peak_gb: self.cluster_local_peak as f64,
            mean_local_gb: (self.total_gbsec - self.pool_gbsec) / duration_sec,
            mean_pool_gb: self.pool_gbsec / duration_sec,
            dram_savings_pct: savings,
            pool_dram_share_pct: if self.total_gbsec > 0.0 {
                100.0 * self.pool_gbsec / self.total_gbsec
            } else {
                0.0
            },
            pre_mitigation_violation_pct: 100.0 * self.violations as f64 / scheduled,
            scheduling_misprediction_pct: 100.0 * self.unmitigated_violations as f64 / scheduled,
            migrations: self.migrations,
            deferred_mitigation_vms: self.deferred_vms,
            offlining_demand: OffliningDemand::from_samples(&mut self.demand_samples),
            stranding_by_core_bucket: self
                .stranding_acc
                .iter()
                .map(|(&bucket, &(sum, count))| {
                    (
                        bucket,
                        BucketStat {
                            mean_pct: sum / count as f64,
                            samples: count,
                        },
                    )
                })
                .collect(),
            mean_pool_traffic_pct: if self.traffic_count > 0 {
                self.traffic_sum_pct / self.traffic_count as f64
            } else {
                0.0
            },
            fp_star_pct: fp_star,
            op_star_pct: op_star,
        };
        Ok(SimRun {
            metrics,
            events: self.events,
        })
    }
}
