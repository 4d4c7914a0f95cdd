//! Acceptance suite: every release criterion runs here at its pinned
//! tolerance and prints one PASS/FAIL line. Reproduction targets use the
//! calibrated synthetic fixture traces (generator defaults, pinned seeds).
//!
//! Run with: cargo test -p poolsim-core --test acceptance -- --nocapture

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use poolsim_core::control_plane::znuma_spill;
use poolsim_core::pool_hw::{state_bytes, AccessVerdict, SliceTable, SNAPSHOT_HEADER_BYTES};
use poolsim_core::predictors::{
    calibrate_forest, calibrate_from_trace, calibrate_threshold, measure_rates, solve_combined,
    synthesize_features, CalibrationOptions, ClassifierKind, CombinedConfig, CombinedSolution,
    LabeledSample, ModelSnapshot, SensitivityModel, TradeoffCurves, UntouchedHistory,
    CURVE_GRID_LEN,
};
use poolsim_core::simulator::{
    compare_policies, run, sweep_pool_sizes, ClusterConfig, EventRecord, Policy, RunOptions,
    SimMetrics, SimRun,
};
use poolsim_core::trace::{generate_trace, TraceGenConfig, VmRequest};

const MAIN_TRACE_SEED: u64 = 41;
const CAL_TRACE_SEED: u64 = 541;
const RUN_SEED: u64 = 41;
const PDM: f64 = 0.05;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} {name} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} {name} failed: {detail}");
}

fn main_trace() -> &'static Vec<VmRequest> {
    static T: OnceLock<Vec<VmRequest>> = OnceLock::new();
    T.get_or_init(|| {
        generate_trace(&TraceGenConfig {
            n_vms: 50_000,
            rng_seed: MAIN_TRACE_SEED,
            ..TraceGenConfig::default()
        })
        .expect("main fixture trace")
    })
}

fn snapshot() -> &'static ModelSnapshot {
    static S: OnceLock<ModelSnapshot> = OnceLock::new();
    S.get_or_init(|| {
        let cal = generate_trace(&TraceGenConfig {
            n_vms: 20_000,
            rng_seed: CAL_TRACE_SEED,
            ..TraceGenConfig::default()
        })
        .expect("calibration fixture trace");
        calibrate_from_trace(&cal, PDM, &CalibrationOptions::default())
            .expect("calibration")
            .0
    })
}

fn pond_policy() -> Policy {
    Policy::Pond {
        combined: CombinedConfig::new(PDM, 98.0).unwrap(),
        classifier: ClassifierKind::Forest,
    }
}

fn cluster(scenario: &str) -> ClusterConfig {
    ClusterConfig {
        scenario: scenario.to_string(),
        ..ClusterConfig::default()
    }
}

/// Event-logged prediction-driven run on the main fixture, shared by the
/// log-scanning criteria.
fn pond_run_182() -> &'static SimRun {
    static R: OnceLock<SimRun> = OnceLock::new();
    R.get_or_init(|| {
        let opts = RunOptions {
            models: Some(snapshot().clone()),
            collect_event_log: true,
            check_invariants: false,
            baseline_total_gb: None,
        };
        run(main_trace(), &cluster("lat182"), &pond_policy(), RUN_SEED, &opts).expect("pond run")
    })
}

// Criterion 1: packed permission-table state matches the published size
// bound exactly, for the 1TB/64-host point and random shapes.
#[test]
fn criterion_01_emc_state_bound() {
    let exact = state_bytes(1024, 64) == 768;
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let mut snapshot_ok = true;
    for _ in 0..20 {
        let n_slices = rng.random_range(1..=4096u32);
        let n_hosts = rng.random_range(1..=64u16);
        let table = SliceTable::new(n_slices, n_hosts).unwrap();
        let want = SNAPSHOT_HEADER_BYTES as u64 + state_bytes(n_slices as u64, n_hosts as u64);
        snapshot_ok &= table.snapshot_bytes().len() as u64 == want;
    }
    report(
        1,
        "emc state bound",
        exact && snapshot_ok,
        &format!("state_bytes(1024,64)={}, 20 random snapshot sizes ok={snapshot_ok}", state_bytes(1024, 64)),
    );
}

// Criterion 2: ownership exclusivity, assign/release inverse, check purity,
// and cross-host release rejection over 10,000 random operations, validated
// against an independent replay oracle.
#[test]
fn criterion_02_ownership_properties() {
    let mut total_ops = 0u32;
    let mut cross_host_rejections = 0u32;
    for seq in 0..25u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + seq);
        let n_slices = rng.random_range(64..=1024u32);
        let n_hosts = rng.random_range(2..=64u16);
        let mut table = SliceTable::new(n_slices, n_hosts).unwrap();
        // Oracle: plain owner map replayed with naive scans.
        let mut oracle: Vec<Option<u16>> = vec![None; n_slices as usize];
        let mut owned: HashMap<u16, Vec<u32>> = HashMap::new();

        for _ in 0..400 {
            total_ops += 1;
            match rng.random_range(0..10u32) {
                0..=3 => {
                    let host = rng.random_range(0..n_hosts);
                    let k = rng.random_range(0..=8u32);
                    let free = oracle.iter().filter(|o| o.is_none()).count() as u32;
                    match table.assign_slices(host, k) {
                        Ok(got) => {
                            assert!(free >= k);
                            // Lowest-index-first against the oracle.
                            let expect: Vec<u32> = (0..n_slices)
                                .filter(|&s| oracle[s as usize].is_none())
                                .take(k as usize)
                                .collect();
                            assert_eq!(got, expect);
                            for &s in &got {
                                oracle[s as usize] = Some(host);
                            }
                            owned.entry(host).or_default().extend(&got);
                        }
                        Err(_) => assert!(free < k),
                    }
                }
                4..=6 => {
                    let host = rng.random_range(0..n_hosts);
                    let slices = owned.remove(&host).unwrap_or_default();
                    if !slices.is_empty() {
                        table.release_slices(host, &slices).unwrap();
                        for &s in &slices {
                            oracle[s as usize] = None;
                        }
                    }
                }
                7..=8 => {
                    let requestor = rng.random_range(0..n_hosts);
                    let slice = rng.random_range(0..n_slices);
                    let verdict = table.check_access(requestor, slice).unwrap();
                    let want = if oracle[slice as usize] == Some(requestor) {
                        AccessVerdict::Allowed
                    } else {
                        AccessVerdict::Fatal
                    };
                    assert_eq!(verdict, want);
                }
                _ => {
                    // Cross-host release must always be rejected.
                    let (victim, thief) = (rng.random_range(0..n_hosts), rng.random_range(0..n_hosts));
                    if victim == thief {
                        continue;
                    }
                    if let Some(slices) = owned.get(&victim) {
                        if let Some(&s) = slices.first() {
                            assert!(table.release_slices(thief, &[s]).is_err());
                            cross_host_rejections += 1;
                        }
                    }
                }
            }
        }
        // Exclusivity and oracle equality via full-table scan.
        table.verify_consistency().unwrap();
        for s in 0..n_slices {
            assert_eq!(table.owner_of(s).unwrap(), oracle[s as usize]);
        }
    }
    report(
        2,
        "ownership property suite",
        total_ops >= 10_000 && cross_host_rejections > 0,
        &format!("{total_ops} ops, {cross_host_rejections} cross-host rejections"),
    );
}

/// Independent brute-force maximizer over the same grid and tie-break order.
fn brute_force_combined(curves: &TradeoffCurves, budget_tenths: usize) -> CombinedSolution {
    let mut best: Option<CombinedSolution> = None;
    for fp_t in 0..=budget_tenths {
        for op_t in 0..=budget_tenths {
            if fp_t + op_t > budget_tenths {
                continue;
            }
            let objective = curves.li_of_fp[fp_t] + curves.um_of_op[op_t];
            if best.as_ref().is_none_or(|b| objective > b.objective) {
                best = Some(CombinedSolution {
                    fp_pct: fp_t as f64 / 10.0,
                    op_pct: op_t as f64 / 10.0,
                    objective,
                });
            }
        }
    }
    best.unwrap()
}

// Criterion 3: the optimizer matches an independent brute force exactly on
// 1,000 random monotone curve pairs; the zero-budget case returns the origin.
#[test]
fn criterion_03_optimizer_equivalence() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let random_curve = |rng: &mut ChaCha12Rng| {
        let mut v = Vec::with_capacity(CURVE_GRID_LEN);
        let mut acc: f64 = rng.random_range(0.0..5.0);
        for _ in 0..CURVE_GRID_LEN {
            if rng.random::<f64>() < 0.05 {
                acc += rng.random_range(0.0..4.0);
            }
            v.push(acc.min(100.0));
        }
        v
    };
    let mut mismatches = 0;
    for i in 0..1000 {
        let curves = TradeoffCurves {
            li_of_fp: random_curve(&mut rng),
            um_of_op: random_curve(&mut rng),
        };
        let tp = [90.0, 95.0, 98.0, 99.5, 99.9][i % 5];
        let cfg = CombinedConfig::new(0.05, tp).unwrap();
        let got = solve_combined(&curves, &cfg).unwrap();
        let want = brute_force_combined(&curves, cfg.budget_tenths());
        if got.objective != want.objective || got.fp_pct != want.fp_pct || got.op_pct != want.op_pct
        {
            mismatches += 1;
        }
        assert!(got.fp_pct + got.op_pct <= 100.0 - tp + 1e-9);
    }
    let curves = TradeoffCurves {
        li_of_fp: random_curve(&mut rng),
        um_of_op: random_curve(&mut rng),
    };
    let zero = solve_combined(&curves, &CombinedConfig::new(0.05, 100.0).unwrap()).unwrap();
    let zero_ok = zero.fp_pct == 0.0 && zero.op_pct == 0.0;
    report(
        3,
        "combined optimizer vs brute force",
        mismatches == 0 && zero_ok,
        &format!("1000 curve pairs, {mismatches} mismatches, zero-budget ok={zero_ok}"),
    );
}

// Criterion 4: the quantile predictor's achieved overprediction rate stays
// within 2pp of every target, claims at least 20% untouched memory around
// the 4% operating point, and beats the static strawman by over 2x in
// overpredictions at the 20% claim level.
#[test]
fn criterion_04_quantile_op_guarantee() {
    let trace = generate_trace(&TraceGenConfig {
        n_vms: 10_000,
        rng_seed: 77,
        ..TraceGenConfig::default()
    })
    .unwrap();
    let split = trace.len() * 6 / 10;
    let mut history = UntouchedHistory::new(7);
    let mut by_day: BTreeMap<u32, Vec<(String, f64)>> = BTreeMap::new();
    for vm in &trace[..split] {
        by_day
            .entry((vm.arrival / 86_400) as u32)
            .or_default()
            .push((vm.customer_id.clone(), vm.ground_truth.untouched_fraction));
    }
    for (day, batch) in &by_day {
        history.ingest_batch(*day, batch.iter().map(|(c, v)| (c.as_str(), *v)));
    }
    let eval = &trace[split..];

    let measure = |target: f64| -> (f64, f64) {
        let mut over = 0usize;
        let mut claimed = 0.0;
        let mut mem = 0.0;
        for vm in eval {
            let pred = history.predict(&vm.customer_id, target);
            if pred > vm.ground_truth.untouched_fraction {
                over += 1;
            }
            claimed += pred * vm.memory_gb as f64;
            mem += vm.memory_gb as f64;
        }
        (100.0 * over as f64 / eval.len() as f64, 100.0 * claimed / mem)
    };

    let mut all_within = true;
    let mut details = String::new();
    for target in [1.0, 2.5, 4.0, 10.0] {
        let (op, _) = measure(target);
        all_within &= op <= target + 2.0;
        details.push_str(&format!("op({target})={op:.2} "));
    }
    let (_, um_at_4) = measure(4.0);
    let um_ok = um_at_4 >= 20.0;

    // Model operating point for a 20% claim vs the fixed-fraction strawman.
    let mut model_op_at_20 = f64::INFINITY;
    for t in 1..=100 {
        let target = t as f64 / 10.0;
        let (op, um) = measure(target);
        if um >= 20.0 {
            model_op_at_20 = op;
            break;
        }
    }
    let static_over = eval
        .iter()
        .filter(|vm| 0.20 > vm.ground_truth.untouched_fraction)
        .count();
    let static_op_at_20 = 100.0 * static_over as f64 / eval.len() as f64;
    let strawman_ok = static_op_at_20 > 2.0 * model_op_at_20;

    report(
        4,
        "quantile predictor OP guarantee",
        all_within && um_ok && strawman_ok,
        &format!(
            "{details}um(4%)={um_at_4:.1}%, model op@20%={model_op_at_20:.2} vs static {static_op_at_20:.2}"
        ),
    );
}

// Criterion 5: calibrated classifiers hold their false-positive targets on
// held-out data; at a 2% budget the labeled-insensitive share reaches 25%,
// with the forest at or above the threshold model.
#[test]
fn criterion_05_classifier_fp_guarantee() {
    let salt = snapshot().feature_salt;
    let cal = generate_trace(&TraceGenConfig {
        n_vms: 20_000,
        rng_seed: CAL_TRACE_SEED,
        ..TraceGenConfig::default()
    })
    .unwrap();
    let held = generate_trace(&TraceGenConfig {
        n_vms: 20_000,
        rng_seed: 99,
        ..TraceGenConfig::default()
    })
    .unwrap();
    let samples = |vms: &[VmRequest], scenario: &str| -> Vec<LabeledSample> {
        vms.iter()
            .map(|vm| LabeledSample {
                features: synthesize_features(&vm.ground_truth, vm.vm_id, salt),
                slowdown: vm.ground_truth.slowdown_full_pool[scenario],
            })
            .collect()
    };

    let mut ok = true;
    let mut details = String::new();
    let mut li_forest_by_scenario = BTreeMap::new();
    for scenario in ["lat182", "lat222"] {
        let cal_samples = samples(&cal, scenario);
        let held_samples = samples(&held, scenario);
        for target in [0.5, 1.0, 2.0] {
            let thr = calibrate_threshold(&cal_samples, PDM, target).unwrap();
            let forest = calibrate_forest(&cal_samples, PDM, target, 48, 7).unwrap();
            let (fp_t, li_t) =
                measure_rates(&SensitivityModel::Threshold(thr), &held_samples, PDM);
            let (fp_f, li_f) = measure_rates(&SensitivityModel::Forest(forest), &held_samples, PDM);
            ok &= fp_t <= target + 1.0 && fp_f <= target + 1.0;
            if target == 2.0 {
                // The 25%-of-workloads anchor is for the milder latency
                // scenario; the harsher one is checked by direction below.
                if scenario == "lat182" {
                    ok &= li_t >= 25.0;
                }
                ok &= li_f >= li_t;
                details.push_str(&format!(
                    "{scenario}@2%: thr fp={fp_t:.2} li={li_t:.1}, forest fp={fp_f:.2} li={li_f:.1}; "
                ));
                li_forest_by_scenario.insert(scenario, li_f);
            }
        }
    }
    // Higher-latency labels make the model less effective (direction check).
    ok &= li_forest_by_scenario["lat222"] < li_forest_by_scenario["lat182"];
    report(5, "classifier FP guarantee", ok, details.trim_end_matches("; "));
}

// Criterion 6: underprediction safety. Every VM whose local allocation
// covers its touched memory records zero slowdown and never migrates.
#[test]
fn criterion_06_underprediction_safety() {
    let run = pond_run_182();
    let mut safe_vms: HashMap<u64, f64> = HashMap::new();
    let mut violations = 0u64;
    for ev in &run.events {
        if let EventRecord::Schedule {
            vm,
            local_gb,
            touched_gb,
            slowdown,
            ..
        } = ev
        {
            if *local_gb as f64 >= *touched_gb {
                safe_vms.insert(*vm, *slowdown);
                if *slowdown != 0.0 {
                    violations += 1;
                }
            }
        }
    }
    for ev in &run.events {
        match ev {
            EventRecord::MigrateStart { vm, .. } if safe_vms.contains_key(vm) => violations += 1,
            EventRecord::Exit { vm, slowdown, .. } if safe_vms.contains_key(vm) => {
                if *slowdown != 0.0 {
                    violations += 1;
                }
            }
            _ => {}
        }
    }
    report(
        6,
        "underprediction safety",
        !safe_vms.is_empty() && violations == 0,
        &format!("{} covered VMs, {violations} violations", safe_vms.len()),
    );
}

// Criterion 7: pool-size sweep at a fixed 50% pool fraction: savings grow
// monotonically with diminishing marginal gains, hitting 12% at 32 sockets
// and 13% at 64, each within 3pp.
#[test]
fn criterion_07_savings_curve_shape() {
    let rows = sweep_pool_sizes(
        main_trace(),
        &cluster("lat182"),
        &Policy::StaticPool { fraction: 0.5 },
        &[8, 16, 32, 64],
        RUN_SEED,
        &RunOptions::default(),
    )
    .unwrap();
    let savings: Vec<f64> = rows.iter().map(|(_, m)| m.dram_savings_pct).collect();
    let monotone = savings.windows(2).all(|w| w[1] >= w[0]);
    let diminishing = (savings[1] - savings[0]) >= (savings[2] - savings[1])
        && (savings[2] - savings[1]) >= (savings[3] - savings[2]);
    let at32 = (savings[2] - 12.0).abs() <= 3.0;
    let at64 = (savings[3] - 13.0).abs() <= 3.0;
    report(
        7,
        "savings curve shape",
        monotone && diminishing && at32 && at64,
        &format!(
            "savings={savings:.2?} monotone={monotone} diminishing={diminishing}"
        ),
    );
}

fn policy_rows(scenario: &str) -> Vec<(String, SimMetrics)> {
    let opts = RunOptions {
        models: Some(snapshot().clone()),
        collect_event_log: false,
        check_invariants: false,
        baseline_total_gb: None,
    };
    compare_policies(
        main_trace(),
        &cluster(scenario),
        &[
            ("all-local".to_string(), Policy::AllLocal),
            ("static15".to_string(), Policy::StaticPool { fraction: 0.15 }),
            ("pond".to_string(), pond_policy()),
        ],
        RUN_SEED,
        &opts,
    )
    .unwrap()
}

// Criterion 8: end-to-end comparison at 16 sockets, PDM=5%, TP=98.
#[test]
fn criterion_08_policy_comparison() {
    let rows182 = policy_rows("lat182");
    let rows222 = policy_rows("lat222");
    let get = |rows: &[(String, SimMetrics)], label: &str| -> SimMetrics {
        rows.iter().find(|(l, _)| l == label).unwrap().1.clone()
    };
    let pond182 = get(&rows182, "pond");
    let pond222 = get(&rows222, "pond");
    let static182 = get(&rows182, "static15");
    let static222 = get(&rows222, "static15");

    let ordering = pond182.dram_savings_pct >= pond222.dram_savings_pct
        && pond222.dram_savings_pct >= static222.dram_savings_pct;
    let pond182_band = (pond182.dram_savings_pct - 9.0).abs() <= 3.0;
    let pond222_band = (pond222.dram_savings_pct - 7.0).abs() <= 3.0;
    let static_band = (static182.dram_savings_pct - 3.0).abs() <= 2.0;
    let static_mispred = (static182.scheduling_misprediction_pct - 2.5).abs() <= 1.0
        && (static222.scheduling_misprediction_pct - 2.5).abs() <= 1.0;
    let pond_mispred = pond182.scheduling_misprediction_pct <= 2.0
        && pond222.scheduling_misprediction_pct <= 2.0
        && pond182.pre_mitigation_violation_pct <= 3.0
        && pond222.pre_mitigation_violation_pct <= 3.0;
    report(
        8,
        "end-to-end policy comparison",
        ordering && pond182_band && pond222_band && static_band && static_mispred && pond_mispred,
        &format!(
            "savings: pond182={:.2} pond222={:.2} static={:.2}; mispred: static182={:.2} static222={:.2} pond182={:.2}",
            pond182.dram_savings_pct,
            pond222.dram_savings_pct,
            static182.dram_savings_pct,
            static182.scheduling_misprediction_pct,
            static222.scheduling_misprediction_pct,
            pond182.scheduling_misprediction_pct,
        ),
    );
}

// Criterion 9: VM starts never wait on offlining: grants draw only from
// ready slices, and implied offlining demand beyond 1GB/s is vanishingly
// rare.
#[test]
fn criterion_09_pipeline_non_blocking() {
    let run = pond_run_182();
    let mut starts = 0u64;
    let mut waited = 0u64;
    for ev in &run.events {
        if let EventRecord::Schedule {
            pool_gb,
            ready_before,
            ..
        } = ev
        {
            starts += 1;
            if pool_gb > ready_before {
                waited += 1;
            }
        }
    }
    let demand_ok = run.metrics.offlining_demand.frac_starts_above_1gbps <= 0.0001
        && run.metrics.offlining_demand.frac_starts_above_10gbps <= 0.00001;
    report(
        9,
        "pipeline non-blocking",
        starts > 0 && waited == 0 && demand_ok,
        &format!(
            "{starts} starts, {waited} waited, frac>1GB/s={:.6}",
            run.metrics.offlining_demand.frac_starts_above_1gbps
        ),
    );
}

// Criterion 10: identical seeds produce byte-identical metrics documents,
// timestamp header aside.
#[test]
fn criterion_10_determinism() {
    let opts = RunOptions {
        models: Some(snapshot().clone()),
        collect_event_log: false,
        check_invariants: false,
        baseline_total_gb: None,
    };
    let a = run(main_trace(), &cluster("lat182"), &pond_policy(), RUN_SEED, &opts).unwrap();
    let b = run(main_trace(), &cluster("lat182"), &pond_policy(), RUN_SEED, &opts).unwrap();
    let strip = |doc: &str| -> String {
        doc.lines()
            .filter(|l| !l.contains("created_unix_ms"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let doc_a = a.metrics.to_document_string(1);
    let doc_b = b.metrics.to_document_string(2);
    let identical = strip(&doc_a) == strip(&doc_b);
    report(
        10,
        "determinism",
        identical,
        &format!("{} bytes compared", doc_a.len()),
    );
}

// The spill formula the safety criterion leans on, pinned here against the
// worked examples.
#[test]
fn spill_examples_hold() {
    assert_eq!(znuma_spill(10, 7, 0.5), 0.0);
    assert!((znuma_spill(10, 3, 0.5) - 0.4).abs() < 1e-12);
    assert_eq!(znuma_spill(8, 0, 0.0), 1.0);
}
