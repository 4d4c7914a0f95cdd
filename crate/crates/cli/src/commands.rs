//! Command implementations. Commands compose through files only: traces,
//! model snapshots, and metrics documents are all on-disk artifacts, so
//! experiments stay reproducible and diffable.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use poolsim_core::predictors::{
    calibrate_from_trace, CalibrationOptions, ClassifierKind, CombinedConfig, ModelSnapshot,
};
use poolsim_core::simulator::{sweep_pool_sizes, ClusterConfig, Policy, RunOptions, SimMetrics};
use poolsim_core::trace::{generate_trace, read_trace, write_trace, TraceGenConfig, VmRequest};

use crate::error::CliError;

fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{what} {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Parse(format!("{what} {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))?;
    Ok(())
}

/// Parses `name[:args]` policy syntax: `all-local`, `static:<fraction>`,
/// `pond[:pdm=<pct>,tp=<pct>,model=<forest|threshold>]`.
pub fn parse_policy(s: &str) -> Result<Policy, CliError> {
    let (name, args) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let policy = match name {
        "all-local" => {
            if args.is_some() {
                return Err(CliError::InvalidConfig("all-local takes no arguments".into()));
            }
            Policy::AllLocal
        }
        "static" => {
            let fraction: f64 = args
                .ok_or_else(|| CliError::InvalidConfig("static needs a fraction, e.g. static:0.15".into()))?
                .parse()
                .map_err(|_| CliError::InvalidConfig(format!("bad static fraction in {s:?}")))?;
            Policy::StaticPool { fraction }
        }
        "pond" => {
            let mut pdm_pct = 5.0;
            let mut tp_pct = 98.0;
            let mut classifier = ClassifierKind::Forest;
            if let Some(args) = args {
                for part in args.split(',') {
                    let (k, v) = part.split_once('=').ok_or_else(|| {
                        CliError::InvalidConfig(format!("bad pond argument {part:?}; expected k=v"))
                    })?;
                    match k {
                        "pdm" => {
                            pdm_pct = v.parse().map_err(|_| {
                                CliError::InvalidConfig(format!("bad pdm value {v:?}"))
                            })?
                        }
                        "tp" => {
                            tp_pct = v.parse().map_err(|_| {
                                CliError::InvalidConfig(format!("bad tp value {v:?}"))
                            })?
                        }
                        "model" => {
                            classifier = match v {
                                "forest" => ClassifierKind::Forest,
                                "threshold" => ClassifierKind::DramBoundThreshold,
                                _ => {
                                    return Err(CliError::InvalidConfig(format!(
                                        "unknown classifier model {v:?}"
                                    )))
                                }
                            }
                        }
                        _ => {
                            return Err(CliError::InvalidConfig(format!(
                                "unknown pond argument {k:?}"
                            )))
                        }
                    }
                }
            }
            let combined = CombinedConfig::new(pdm_pct / 100.0, tp_pct)?;
            Policy::Pond { combined, classifier }
        }
        _ => {
            return Err(CliError::InvalidConfig(format!(
                "unknown policy {name:?}; expected all-local, static:<frac>, or pond[:...]"
            )))
        }
    };
    policy.validate()?;
    Ok(policy)
}

pub fn cmd_gen_trace(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: TraceGenConfig = read_toml(config, "trace config")?;
    if let Some(seed) = seed {
        cfg.rng_seed = seed;
    }
    let vms = generate_trace(&cfg)?;
    write_trace(&vms, out)?;
    println!("wrote {} VMs to {}", vms.len(), out.display());
    Ok(())
}

pub fn cmd_calibrate(trace: &Path, pdm_pct: f64, out: &Path, salt: u64) -> Result<(), CliError> {
    let vms = load_trace(trace)?;
    let opts = CalibrationOptions {
        feature_salt: salt,
        ..CalibrationOptions::default()
    };
    let (snapshot, report) = calibrate_from_trace(&vms, pdm_pct / 100.0, &opts)?;
    snapshot.save(out)?;

    // Tradeoff-curve report next to the snapshot, one row per 0.1pp budget.
    let curves_path = out.with_extension("curves.csv");
    let mut csv = String::from("rate_tenths_pp,um_of_op");
    let scenario_names: Vec<&String> = report.li_curves.keys().collect();
    for name in &scenario_names {
        csv.push_str(&format!(",li_of_fp_{name}"));
    }
    csv.push('\n');
    for t in 0..report.um_curve.len() {
        csv.push_str(&format!("{t},{:.4}", report.um_curve[t]));
        for name in &scenario_names {
            csv.push_str(&format!(",{:.4}", report.li_curves[*name][t]));
        }
        csv.push('\n');
    }
    fs::write(&curves_path, csv)?;
    println!(
        "wrote model snapshot to {} and curves to {}",
        out.display(),
        curves_path.display()
    );
    Ok(())
}

fn load_trace(path: &Path) -> Result<Vec<VmRequest>, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("trace file {} not found", path.display())));
    }
    Ok(read_trace(path)?)
}

fn load_cluster(path: Option<&PathBuf>) -> Result<ClusterConfig, CliError> {
    let cluster = match path {
        Some(p) => read_toml(p, "cluster config")?,
        None => ClusterConfig::default(),
    };
    cluster.validate()?;
    Ok(cluster)
}

fn load_models(path: Option<&PathBuf>) -> Result<Option<ModelSnapshot>, CliError> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Io(format!("model snapshot {} not found", p.display())));
            }
            Ok(Some(ModelSnapshot::load(p)?))
        }
        None => Ok(None),
    }
}

struct RunArtifacts<'a> {
    out_dir: &'a Path,
    label: &'a str,
}

fn write_run_artifacts(
    art: &RunArtifacts<'_>,
    metrics: &SimMetrics,
    events: Option<&[poolsim_core::simulator::EventRecord]>,
) -> Result<(), CliError> {
    ensure_dir(art.out_dir)?;
    let doc = metrics.to_document_string(now_unix_ms());
    fs::write(art.out_dir.join(format!("{}.metrics.json", art.label)), doc)?;
    let mut csv = format!("{}\n{}\n", SimMetrics::CSV_HEADER, metrics.csv_row());
    csv.push('\n');
    fs::write(art.out_dir.join(format!("{}.metrics.csv", art.label)), csv)?;
    if let Some(events) = events {
        let mut log = String::with_capacity(events.len() * 64);
        for ev in events {
            log.push_str(&ev.to_string());
            log.push('\n');
        }
        fs::write(art.out_dir.join(format!("{}.events.log", art.label)), log)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_run(
    trace: &Path,
    cluster: Option<&PathBuf>,
    policy_str: &str,
    models: Option<&PathBuf>,
    seed: u64,
    out_dir: &Path,
    event_log: bool,
    assert_invariants: bool,
) -> Result<(), CliError> {
    let vms = load_trace(trace)?;
    let cluster = load_cluster(cluster)?;
    let policy = parse_policy(policy_str)?;
    let opts = RunOptions {
        models: load_models(models)?,
        collect_event_log: event_log,
        check_invariants: assert_invariants,
        baseline_total_gb: None,
    };
    let run = poolsim_core::simulator::run(&vms, &cluster, &policy, seed, &opts)?;
    write_run_artifacts(
        &RunArtifacts {
            out_dir,
            label: "run",
        },
        &run.metrics,
        event_log.then_some(run.events.as_slice()),
    )?;
    println!(
        "policy={} scenario={} savings={:.2}% mispredictions={:.2}% -> {}",
        run.metrics.policy,
        run.metrics.scenario,
        run.metrics.dram_savings_pct,
        run.metrics.scheduling_misprediction_pct,
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    trace: &Path,
    cluster: Option<&PathBuf>,
    sizes: &str,
    policies: &str,
    models: Option<&PathBuf>,
    seed: u64,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let vms = load_trace(trace)?;
    let cluster = load_cluster(cluster)?;
    let sizes: Vec<u32> = sizes
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::InvalidConfig(format!("bad pool size {t:?}")))
        })
        .collect::<Result<_, _>>()?;
    let policies: Vec<(String, Policy)> = policies
        .split(',')
        .map(|t| parse_policy(t.trim()).map(|p| (t.trim().to_string(), p)))
        .collect::<Result<_, _>>()?;
    let models = load_models(models)?;

    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Run(format!("thread pool: {e}")))?;
    }

    // One shared all-local baseline; then independent runs per policy,
    // parallel across policies.
    let baseline =
        poolsim_core::simulator::run(&vms, &cluster, &Policy::AllLocal, seed, &RunOptions::default())?
            .metrics
            .local_peak_gb;
    use rayon::prelude::*;
    let rows: Vec<Result<Vec<(String, u32, SimMetrics)>, CliError>> = policies
        .par_iter()
        .map(|(label, policy)| {
            let opts = RunOptions {
                models: models.clone(),
                collect_event_log: false,
                check_invariants: false,
                baseline_total_gb: Some(baseline),
            };
            let per_size = sweep_pool_sizes(&vms, &cluster, policy, &sizes, seed, &opts)?;
            Ok(per_size
                .into_iter()
                .map(|(size, m)| (label.clone(), size, m))
                .collect())
        })
        .collect();

    ensure_dir(out_dir)?;
    let mut all: Vec<(String, u32, SimMetrics)> = Vec::new();
    for row in rows {
        all.extend(row?);
    }
    all.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));

    let mut csv = format!("label,{}\n", SimMetrics::CSV_HEADER);
    for (label, size, m) in &all {
        csv.push_str(&format!("{label},{}\n", m.csv_row()));
        fs::write(
            out_dir.join(format!("{}_{}s.metrics.json", label.replace([':', ','], "_"), size)),
            m.to_document_string(now_unix_ms()),
        )?;
    }
    fs::write(out_dir.join("sweep.csv"), csv)?;
    println!(
        "swept {} policies x {} sizes -> {}",
        policies.len(),
        sizes.len(),
        out_dir.display()
    );
    Ok(())
}

fn collect_metrics_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", dir.display())))?
    {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_metrics_files(&path, out)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(".metrics.json"))
        {
            out.push(path);
        }
    }
    Ok(())
}

pub fn cmd_report(in_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect_metrics_files(in_dir, &mut files)?;
    if files.is_empty() {
        return Err(CliError::Io(format!(
            "no .metrics.json files under {}",
            in_dir.display()
        )));
    }
    files.sort();
    let mut rows = Vec::with_capacity(files.len());
    for path in &files {
        let text = fs::read_to_string(path)?;
        let metrics = SimMetrics::from_document_str(&text)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        rows.push(metrics);
    }
    rows.sort_by(|a, b| {
        (&a.policy, &a.scenario, a.pool_sockets).cmp(&(&b.policy, &b.scenario, b.pool_sockets))
    });

    ensure_dir(out_dir)?;
    let mut summary = format!("{}\n", SimMetrics::CSV_HEADER);
    for m in &rows {
        summary.push_str(&m.csv_row());
        summary.push('\n');
    }
    fs::write(out_dir.join("summary.csv"), summary)?;

    // Plot-ready savings vs pool size, one row per (policy, scenario, size).
    let mut savings = String::from("policy,scenario,pool_sockets,dram_savings_pct\n");
    let mut sorted: Vec<&SimMetrics> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.policy, &a.scenario, a.pool_sockets).cmp(&(&b.policy, &b.scenario, b.pool_sockets))
    });
    for m in sorted {
        savings.push_str(&format!(
            "{},{},{},{:.4}\n",
            m.policy, m.scenario, m.pool_sockets, m.dram_savings_pct
        ));
    }
    fs::write(out_dir.join("savings_by_size.csv"), savings)?;
    println!("report over {} runs -> {}", rows.len(), out_dir.display());
    Ok(())
}

pub fn cmd_defaults(kind: &str) -> Result<(), CliError> {
    let text = match kind {
        "trace" => toml::to_string_pretty(&TraceGenConfig::default())
            .map_err(|e| CliError::Run(e.to_string()))?,
        "cluster" => toml::to_string_pretty(&ClusterConfig::default())
            .map_err(|e| CliError::Run(e.to_string()))?,
        _ => {
            return Err(CliError::InvalidConfig(format!(
                "unknown defaults kind {kind:?}; expected trace or cluster"
            )))
        }
    };
    println!("{text}");
    Ok(())
}
