//! Run metrics and their machine-readable exports: one JSON document per run
//! (stable key names; units in the field names) and a flat CSV row for
//! plotting. The document is byte-deterministic given the run's seed except
//! for the `created_unix_ms` line in its meta header.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Mean stranding within one scheduled-cores bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BucketStat {
    pub mean_pct: f64,
    pub samples: u64,
}

/// Implied offlining demand observed at VM starts: the pool GB a start
/// wanted beyond what was ready, per one-second accounting window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct OffliningDemand {
    pub p50_gbps: f64,
    pub p99_gbps: f64,
    pub p999_gbps: f64,
    pub p9999_gbps: f64,
    pub max_gbps: f64,
    pub frac_starts_above_1gbps: f64,
    pub frac_starts_above_10gbps: f64,
}

impl OffliningDemand {
    pub fn from_samples(samples: &mut [f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        let n = samples.len();
        let pick = |q: f64| samples[((q * n as f64) as usize).min(n - 1)];
        let above = |x: f64| samples.iter().filter(|&&v| v > x).count() as f64 / n as f64;
        Self {
            p50_gbps: pick(0.50),
            p99_gbps: pick(0.99),
            p999_gbps: pick(0.999),
            p9999_gbps: pick(0.9999),
            max_gbps: samples[n - 1],
            frac_starts_above_1gbps: above(1.0),
            frac_starts_above_10gbps: above(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub policy: String,
    pub scenario: String,
    pub pool_sockets: u32,
    pub seed: u64,

    pub vm_count: u64,
    pub scheduled_vms: u64,
    pub blocked_vms: u64,
    pub moved_vms: u64,

    /// Sum over servers of peak local GB in the all-local baseline.
    pub baseline_peak_gb: f64,
    /// Sum over servers of peak local GB under this policy.
    pub local_peak_gb: f64,
    /// Sum over pools of peak occupied (assigned + draining) GB.
    pub pool_peak_gb: f64,
    /// Peak of the cluster-wide aggregate local usage.
    pub cluster_local_peak_gb: f64,
    /// Time-average local and pool usage over the run, GB.
    pub mean_local_gb: f64,
    pub mean_pool_gb: f64,
    /// 100 * (1 - (local + pool) / baseline).
    pub dram_savings_pct: f64,
    /// Share of allocated GB-seconds served from the pool.
    pub pool_dram_share_pct: f64,

    /// VMs whose realized slowdown exceeded the margin, before mitigation.
    pub pre_mitigation_violation_pct: f64,
    /// Violating VMs never mitigated, the post-mitigation misprediction rate.
    pub scheduling_misprediction_pct: f64,
    pub migrations: u64,
    pub deferred_mitigation_vms: u64,

    pub offlining_demand: OffliningDemand,
    /// Scheduled-cores bucket (5pp lower edge) -> mean stranded DRAM %.
    pub stranding_by_core_bucket: BTreeMap<u32, BucketStat>,
    /// Mean traffic share to the zNUMA node across pool-backed VMs, percent.
    pub mean_pool_traffic_pct: f64,

    /// Budget split chosen by the combined optimizer, when applicable.
    pub fp_star_pct: Option<f64>,
    pub op_star_pct: Option<f64>,
}

impl SimMetrics {
    /// Full document: metadata header plus metrics, pretty-printed with one
    /// key per line so the timestamp can be stripped for byte comparison.
    pub fn to_document_string(&self, created_unix_ms: u64) -> String {
        let doc = serde_json::json!({
            "meta": {
                "created_unix_ms": created_unix_ms,
                "format": "poolsim-metrics-v1",
                "seed": self.seed,
            },
            "metrics": self,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn from_document_str(text: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct Doc {
            metrics: SimMetrics,
        }
        Ok(serde_json::from_str::<Doc>(text)?.metrics)
    }

    pub fn stranding_mean_for_bucket(&self, bucket: u32) -> Option<f64> {
        self.stranding_by_core_bucket.get(&bucket).map(|b| b.mean_pct)
    }

    pub const CSV_HEADER: &'static str = "policy,scenario,pool_sockets,seed,vm_count,scheduled_vms,blocked_vms,moved_vms,baseline_peak_gb,local_peak_gb,pool_peak_gb,dram_savings_pct,pool_dram_share_pct,pre_mitigation_violation_pct,scheduling_misprediction_pct,migrations,deferred_mitigation_vms,offlining_frac_above_1gbps,offlining_frac_above_10gbps,mean_pool_traffic_pct,fp_star_pct,op_star_pct";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.4},{:.4},{:.4},{:.4},{},{},{:.6},{:.6},{:.4},{},{}",
            self.policy,
            self.scenario,
            self.pool_sockets,
            self.seed,
            self.vm_count,
            self.scheduled_vms,
            self.blocked_vms,
            self.moved_vms,
            self.baseline_peak_gb,
            self.local_peak_gb,
            self.pool_peak_gb,
            self.dram_savings_pct,
            self.pool_dram_share_pct,
            self.pre_mitigation_violation_pct,
            self.scheduling_misprediction_pct,
            self.migrations,
            self.deferred_mitigation_vms,
            self.offlining_demand.frac_starts_above_1gbps,
            self.offlining_demand.frac_starts_above_10gbps,
            self.mean_pool_traffic_pct,
            opt(self.fp_star_pct),
            opt(self.op_star_pct),
        )
    }
}
