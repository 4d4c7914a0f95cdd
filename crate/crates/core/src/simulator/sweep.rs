//! What-if experiments: pool-size sweeps and policy comparisons over a shared
//! trace. All runs compare against one all-local baseline, which is
//! independent of pool size by construction.

use super::cluster::{ClusterConfig, Policy};
use super::engine::{run, RunOptions, SimRun};
use super::metrics::SimMetrics;
use super::SimError;
use crate::trace::VmRequest;

/// Computes the shared all-local baseline: the sum of per-server local peaks.
pub fn baseline_total_gb(
    trace: &[VmRequest],
    cluster: &ClusterConfig,
    seed: u64,
) -> Result<f64, SimError> {
    Ok(run(trace, cluster, &Policy::AllLocal, seed, &RunOptions::default())?
        .metrics
        .local_peak_gb)
}

/// Runs the policy at each pool size and returns per-size metrics in input
/// order. Sizes must divide the per-cluster server count.
pub fn sweep_pool_sizes(
    trace: &[VmRequest],
    base: &ClusterConfig,
    policy: &Policy,
    sizes: &[u32],
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<(u32, SimMetrics)>, SimError> {
    for &size in sizes {
        let candidate = ClusterConfig {
            pool_sockets: size,
            ..base.clone()
        };
        candidate.validate()?;
    }
    let baseline = match opts.baseline_total_gb {
        Some(b) => b,
        None => baseline_total_gb(trace, base, seed)?,
    };
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let cluster = ClusterConfig {
            pool_sockets: size,
            ..base.clone()
        };
        let run_opts = RunOptions {
            baseline_total_gb: Some(baseline),
            models: opts.models.clone(),
            collect_event_log: false,
            check_invariants: opts.check_invariants,
        };
        let SimRun { metrics, .. } = run(trace, &cluster, policy, seed, &run_opts)?;
        out.push((size, metrics));
    }
    Ok(out)
}

/// Runs each labeled policy on the shared trace and cluster; one metrics row
/// per policy, against a common baseline.
pub fn compare_policies(
    trace: &[VmRequest],
    cluster: &ClusterConfig,
    policies: &[(String, Policy)],
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<(String, SimMetrics)>, SimError> {
    let baseline = match opts.baseline_total_gb {
        Some(b) => b,
        None => baseline_total_gb(trace, cluster, seed)?,
    };
    let mut rows = Vec::with_capacity(policies.len());
    for (label, policy) in policies {
        let run_opts = RunOptions {
            baseline_total_gb: Some(baseline),
            models: opts.models.clone(),
            collect_event_log: opts.collect_event_log,
            check_invariants: opts.check_invariants,
        };
        let SimRun { metrics, .. } = run(trace, cluster, policy, seed, &run_opts)?;
        rows.push((label.clone(), metrics));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_trace, TraceGenConfig};

    #[test]
    fn size_not_dividing_servers_is_config_error() {
        let trace = generate_trace(&TraceGenConfig {
            n_vms: 50,
            ..TraceGenConfig::default()
        })
        .unwrap();
        let base = ClusterConfig {
            servers_per_cluster: 48,
            ..ClusterConfig::default()
        };
        let got = sweep_pool_sizes(
            &trace,
            &base,
            &Policy::StaticPool { fraction: 0.5 },
            &[32],
            1,
            &RunOptions::default(),
        );
        assert!(matches!(got, Err(SimError::Config(_))));
    }

    #[test]
    fn zero_pool_fraction_saves_nothing_at_every_size() {
        let trace = generate_trace(&TraceGenConfig {
            n_vms: 1200,
            rng_seed: 8,
            ..TraceGenConfig::default()
        })
        .unwrap();
        let rows = sweep_pool_sizes(
            &trace,
            &ClusterConfig::default(),
            &Policy::StaticPool { fraction: 0.0 },
            &[8, 16, 32, 64],
            1,
            &RunOptions::default(),
        )
        .unwrap();
        for (_, m) in rows {
            assert_eq!(m.dram_savings_pct, 0.0);
        }
    }
}
