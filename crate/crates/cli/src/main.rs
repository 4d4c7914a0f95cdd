//! `poolsim`: trace generation, model calibration, policy runs, what-if
//! sweeps, and reporting for the memory-pooling cluster simulator. Commands
//! compose via files; a run's seed determines every output byte except the
//! timestamp in each metrics document's meta header.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "poolsim", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic VM trace from a TOML config.
    GenTrace {
        /// Trace generator config (TOML); see `poolsim defaults --kind trace`.
        #[arg(long)]
        config: PathBuf,
        /// Output trace file.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Calibrate prediction models from an offline trace.
    Calibrate {
        /// Labeled trace acting as the offline measurement corpus.
        #[arg(long)]
        trace: PathBuf,
        /// Performance degradation margin, percent (e.g. 5).
        #[arg(long)]
        pdm: f64,
        /// Output model snapshot path; a curves CSV lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Telemetry synthesis salt; keep constant across related runs.
        #[arg(long, default_value_t = 0x706f6f6c)]
        salt: u64,
    },
    /// Replay a trace under one policy and emit metrics.
    Run {
        #[arg(long)]
        trace: PathBuf,
        /// Cluster config (TOML); defaults to the built-in cluster.
        #[arg(long)]
        cluster: Option<PathBuf>,
        /// Policy: all-local | static:<fraction> | pond[:pdm=<pct>,tp=<pct>,model=<forest|threshold>]
        #[arg(long)]
        policy: String,
        /// Model snapshot from `calibrate`; required for pond policies.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory for metrics (and the optional event log).
        #[arg(long)]
        out: PathBuf,
        /// Write the per-event log next to the metrics.
        #[arg(long)]
        event_log: bool,
        /// Verify conservation invariants at every event (slow).
        #[arg(long)]
        assert_invariants: bool,
    },
    /// Run a grid of pool sizes x policies over one trace.
    Sweep {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        cluster: Option<PathBuf>,
        /// Comma-separated pool sizes, e.g. 8,16,32,64.
        #[arg(long, default_value = "8,16,32,64")]
        sizes: String,
        /// Comma-separated policies, same syntax as `run --policy`.
        #[arg(long, default_value = "static:0.5")]
        policies: String,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Parallel runs; defaults to the rayon heuristic.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate metrics documents into plot-ready tables.
    Report {
        /// Directory scanned recursively for *.metrics.json.
        #[arg(long = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default TOML for a config kind (trace | cluster).
    Defaults {
        #[arg(long)]
        kind: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenTrace { config, out, seed } => commands::cmd_gen_trace(config, out, *seed),
        Command::Calibrate {
            trace,
            pdm,
            out,
            salt,
        } => commands::cmd_calibrate(trace, *pdm, out, *salt),
        Command::Run {
            trace,
            cluster,
            policy,
            models,
            seed,
            out,
            event_log,
            assert_invariants,
        } => commands::cmd_run(
            trace,
            cluster.as_ref(),
            policy,
            models.as_ref(),
            *seed,
            out,
            *event_log,
            *assert_invariants,
        ),
        Command::Sweep {
            trace,
            cluster,
            sizes,
            policies,
            models,
            seed,
            out,
            jobs,
        } => commands::cmd_sweep(
            trace,
            cluster.as_ref(),
            sizes,
            policies,
            models.as_ref(),
            *seed,
            out,
            *jobs,
        ),
        Command::Report { in_dir, out } => commands::cmd_report(in_dir, out),
        Command::Defaults { kind } => commands::cmd_defaults(kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
