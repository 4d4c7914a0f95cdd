//! Engine-level control-plane flows on crafted traces: migration timing,
//! mitigation accounting, and buffer-capped grants.

use std::collections::BTreeMap;

use poolsim_core::predictors::{
    calibrate_from_trace, CalibrationOptions, ClassifierKind, CombinedConfig, ModelSnapshot,
    ScenarioCalibration, UntouchedHistory, CURVE_GRID_LEN,
};
use poolsim_core::simulator::{run, ClusterConfig, EventRecord, Policy, QosConfig, RunOptions};
use poolsim_core::trace::{generate_trace, TraceGenConfig, VmRequest, WorkloadGroundTruth};

fn tiny_cluster() -> ClusterConfig {
    ClusterConfig {
        clusters: 1,
        servers_per_cluster: 8,
        cores_per_server: 8,
        local_dram_gb_per_server: 64,
        pool_sockets: 8,
        pool_gb_per_socket: 16,
        scenario: "lat182".to_string(),
        qos: QosConfig {
            monitor_noise_sd: 0.0,
            mitigation_budget_frac: 1.0,
            ..QosConfig::default()
        },
        ..ClusterConfig::default()
    }
}

fn vm(id: u64, customer: &str, mem: u32, untouched: f64, full_slowdown: f64) -> VmRequest {
    VmRequest {
        vm_id: id,
        customer_id: customer.to_string(),
        vm_type: "t".to_string(),
        arrival: 0,
        lifetime: 3600,
        cores: 2,
        memory_gb: mem,
        server_hint: Some(0),
        ground_truth: WorkloadGroundTruth {
            untouched_fraction: untouched,
            slowdown_full_pool: BTreeMap::from([("lat182".to_string(), full_slowdown)]),
            curve_exponent: 0.5,
        },
    }
}

/// Snapshot that never labels VMs insensitive and predicts whatever the
/// injected history holds.
fn crafted_snapshot(history: UntouchedHistory) -> ModelSnapshot {
    let zeros = vec![0.0; CURVE_GRID_LEN];
    let um_flat: Vec<f64> = (0..CURVE_GRID_LEN).map(|t| if t == 0 { 0.0 } else { 60.0 }).collect();
    ModelSnapshot {
        version: 1,
        pdm: 0.05,
        feature_salt: 7,
        um_curve: um_flat,
        scenarios: BTreeMap::from([(
            "lat182".to_string(),
            ScenarioCalibration {
                li_curve_threshold: zeros.clone(),
                li_curve_forest: zeros.clone(),
                theta_by_fp: vec![0.0; CURVE_GRID_LEN],
                stumps: Vec::new(),
                min_votes_by_fp: vec![1; CURVE_GRID_LEN],
            },
        )]),
        history,
    }
}

#[test]
fn overpredicted_vm_migrates_at_50ms_per_gb() {
    // History says 60% untouched; the VM touches everything. The predictor
    // hands out 6 pool GB, the spill blows the margin, and the one-time
    // reconfiguration costs 50ms per pool GB.
    let mut history = UntouchedHistory::new(7);
    history.ingest_batch(0, (0..20).map(|_| ("c1", 0.6)));
    let snapshot = crafted_snapshot(history);
    let trace = vec![vm(0, "c1", 10, 0.0, 0.4)];
    let opts = RunOptions {
        models: Some(snapshot),
        collect_event_log: true,
        check_invariants: true,
        baseline_total_gb: None,
    };
    let policy = Policy::Pond {
        combined: CombinedConfig::new(0.05, 98.0).unwrap(),
        classifier: ClassifierKind::DramBoundThreshold,
    };
    let run = run(&trace, &tiny_cluster(), &policy, 1, &opts).unwrap();

    let schedule = run
        .events
        .iter()
        .find_map(|ev| match ev {
            EventRecord::Schedule { pool_gb, local_gb, .. } => Some((*pool_gb, *local_gb)),
            _ => None,
        })
        .expect("schedule event");
    assert_eq!(schedule, (6, 4));

    let (start_t, done_expected) = run
        .events
        .iter()
        .find_map(|ev| match ev {
            EventRecord::MigrateStart { t_ms, done_ms, .. } => Some((*t_ms, *done_ms)),
            _ => None,
        })
        .expect("migration start");
    assert_eq!(done_expected - start_t, 50 * 6);
    let done_t = run
        .events
        .iter()
        .find_map(|ev| match ev {
            EventRecord::MigrateDone { t_ms, .. } => Some(*t_ms),
            _ => None,
        })
        .expect("migration done");
    assert_eq!(done_t, done_expected);

    assert_eq!(run.metrics.migrations, 1);
    // Mitigated before exit: no residual misprediction.
    assert_eq!(run.metrics.scheduling_misprediction_pct, 0.0);
    assert!(run.metrics.pre_mitigation_violation_pct > 0.0);
}

#[test]
fn grants_cap_at_ready_buffer() {
    // Pool of 8 slices. A filler VM with a 0.9-untouched history grabs
    // floor(0.9 * 8) = 7 of them; the target VM wants 6 but finds 1 ready.
    let cluster = ClusterConfig {
        pool_gb_per_socket: 1,
        ..tiny_cluster()
    };
    let mut history = UntouchedHistory::new(7);
    history.ingest_batch(0, (0..20).map(|_| ("c1", 0.6)));
    history.ingest_batch(0, (0..20).map(|_| ("c2", 0.9)));
    let snapshot = crafted_snapshot(history);

    let mut filler = vm(1, "c2", 8, 0.9, 0.0);
    filler.cores = 1;
    let mut target = vm(0, "c1", 10, 0.6, 0.4);
    target.arrival = 1;
    let trace2 = vec![filler, target];

    let opts = RunOptions {
        models: Some(snapshot),
        collect_event_log: true,
        check_invariants: true,
        baseline_total_gb: None,
    };
    let policy = Policy::Pond {
        combined: CombinedConfig::new(0.05, 98.0).unwrap(),
        classifier: ClassifierKind::DramBoundThreshold,
    };
    let run = run(&trace2, &cluster, &policy, 1, &opts).unwrap();

    let schedules: Vec<(u64, u32, u32, u32)> = run
        .events
        .iter()
        .filter_map(|ev| match ev {
            EventRecord::Schedule {
                vm,
                pool_gb,
                want_pool_gb,
                ready_before,
                ..
            } => Some((*vm, *pool_gb, *want_pool_gb, *ready_before)),
            _ => None,
        })
        .collect();
    assert_eq!(schedules.len(), 2);
    let (_, filler_pool, _, _) = schedules[0];
    assert_eq!(filler_pool, 7);
    let (id, pool_gb, want, ready) = schedules[1];
    assert_eq!(id, 0);
    assert_eq!(want, 6);
    assert_eq!(ready, 1);
    assert_eq!(pool_gb, 1, "grant capped by the ready buffer");
}

#[test]
fn mitigation_reduces_mispredictions() {
    let cal = generate_trace(&TraceGenConfig {
        n_vms: 6_000,
        rng_seed: 1201,
        ..TraceGenConfig::default()
    })
    .unwrap();
    let (snapshot, _) = calibrate_from_trace(&cal, 0.05, &CalibrationOptions::default()).unwrap();
    let trace = generate_trace(&TraceGenConfig {
        n_vms: 6_000,
        rng_seed: 1202,
        ..TraceGenConfig::default()
    })
    .unwrap();
    let policy = Policy::Pond {
        combined: CombinedConfig::new(0.05, 98.0).unwrap(),
        classifier: ClassifierKind::Forest,
    };
    let run_with = |budget: f64| {
        let cluster = ClusterConfig {
            qos: QosConfig {
                mitigation_budget_frac: budget,
                ..QosConfig::default()
            },
            ..ClusterConfig::default()
        };
        let opts = RunOptions {
            models: Some(snapshot.clone()),
            collect_event_log: false,
            check_invariants: false,
            baseline_total_gb: Some(1.0),
        };
        run(&trace, &cluster, &policy, 5, &opts).unwrap().metrics
    };
    let with = run_with(0.01);
    let without = run_with(0.0);
    assert_eq!(without.migrations, 0);
    assert!(with.migrations > 0);
    assert!(
        without.scheduling_misprediction_pct >= with.scheduling_misprediction_pct,
        "no-mitigation {} < with-mitigation {}",
        without.scheduling_misprediction_pct,
        with.scheduling_misprediction_pct
    );
    // Pre-mitigation violations are placement-determined and identical.
    assert_eq!(
        without.pre_mitigation_violation_pct,
        with.pre_mitigation_violation_pct
    );
    assert_eq!(
        without.scheduling_misprediction_pct,
        without.pre_mitigation_violation_pct
    );
}
