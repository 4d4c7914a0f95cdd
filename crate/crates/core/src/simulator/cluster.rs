//! Cluster shape, per-run QoS knobs, and allocation policies.

use serde::{Deserialize, Serialize};

use crate::pool_hw::{LatencyScenario, PoolTopology, TimingModel};
use crate::predictors::{ClassifierKind, CombinedConfig};

use super::SimError;

fn default_tick_secs() -> u64 {
    1
}
fn default_window_secs() -> u64 {
    3600
}
fn default_budget_frac() -> f64 {
    0.01
}
fn default_noise_sd() -> f64 {
    0.005
}
fn default_residual_pct() -> f64 {
    0.25
}
fn default_pdm() -> f64 {
    0.05
}

/// QoS monitoring knobs. The slowdown estimate fed to workflow B is the true
/// slowdown plus Gaussian observation noise, standing in for PMU-derived
/// monitoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QosConfig {
    /// Telemetry cadence in simulated seconds.
    pub tick_secs: u64,
    /// Rolling window for the mitigation budget.
    pub window_secs: u64,
    /// Share of the window's VM population that may be migrated.
    pub mitigation_budget_frac: f64,
    /// Observation noise on the monitored slowdown.
    pub monitor_noise_sd: f64,
    /// Residual traffic to the zNUMA node for correctly sized splits, percent.
    pub residual_pool_traffic_pct: f64,
    /// Accounting margin for policies that do not carry their own.
    pub pdm: f64,
}

impl Default for QosConfig {
    fn default() -> Self {
        Self {
            tick_secs: default_tick_secs(),
            window_secs: default_window_secs(),
            mitigation_budget_frac: default_budget_frac(),
            monitor_noise_sd: default_noise_sd(),
            residual_pool_traffic_pct: default_residual_pct(),
            pdm: default_pdm(),
        }
    }
}

fn default_clusters() -> u32 {
    1
}
fn default_servers_per_cluster() -> u32 {
    128
}
fn default_cores_per_server() -> u32 {
    48
}
fn default_dram() -> u32 {
    384
}
fn default_pool_sockets() -> u32 {
    16
}
fn default_pool_gb_per_socket() -> u32 {
    192
}
fn default_scenario() -> String {
    "lat182".to_string()
}
fn default_snapshot_interval() -> u64 {
    60
}

/// Cluster shape. Servers are single-socket; pool groups of `pool_sockets`
/// consecutive servers share one pool of `pool_sockets * pool_gb_per_socket`
/// 1GB slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub clusters: u32,
    pub servers_per_cluster: u32,
    pub cores_per_server: u32,
    pub local_dram_gb_per_server: u32,
    pub pool_sockets: u32,
    pub pool_gb_per_socket: u32,
    /// Latency scenario name; must exist in the trace's ground truth.
    pub scenario: String,
    /// Ready-buffer target per pool; reporting only. Zero means
    /// max(1% of pool, 8).
    pub buffer_target_slices: u32,
    /// Stranding snapshot cadence in simulated seconds.
    pub snapshot_interval_secs: u64,
    /// Headroom of the local-memory packing dimension: a server takes a VM
    /// only while its local usage stays within (1 + slack) times its
    /// share-scaled all-local reference; overflow falls back to servers
    /// below their own cap. Policies that keep memory local never hit it.
    pub balance_slack: f64,
    /// Headroom of the pool packing dimension, per pool group. Wider than
    /// the local slack so uniform-split policies pass through untouched.
    pub pool_balance_slack: f64,
    pub timing: TimingModel,
    pub qos: QosConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            clusters: default_clusters(),
            servers_per_cluster: default_servers_per_cluster(),
            cores_per_server: default_cores_per_server(),
            local_dram_gb_per_server: default_dram(),
            pool_sockets: default_pool_sockets(),
            pool_gb_per_socket: default_pool_gb_per_socket(),
            scenario: default_scenario(),
            buffer_target_slices: 0,
            snapshot_interval_secs: default_snapshot_interval(),
            balance_slack: 0.02,
            pool_balance_slack: 0.03,
            timing: TimingModel::default(),
            qos: QosConfig::default(),
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.clusters == 0 || self.servers_per_cluster == 0 {
            return Err(SimError::Config("cluster shape must be non-empty".into()));
        }
        if self.cores_per_server == 0 || self.local_dram_gb_per_server == 0 {
            return Err(SimError::Config("server shape must be non-empty".into()));
        }
        PoolTopology::for_sockets(self.pool_sockets).map_err(|e| SimError::Config(e.to_string()))?;
        if self.servers_per_cluster % self.pool_sockets != 0 {
            return Err(SimError::Config(format!(
                "pool size {} does not divide servers_per_cluster {}",
                self.pool_sockets, self.servers_per_cluster
            )));
        }
        if self.pool_gb_per_socket == 0 {
            return Err(SimError::Config("pool_gb_per_socket must be positive".into()));
        }
        if self.snapshot_interval_secs == 0 || self.qos.tick_secs == 0 {
            return Err(SimError::Config("cadences must be positive".into()));
        }
        if !(0.0..=10.0).contains(&self.balance_slack)
            || !(0.0..=10.0).contains(&self.pool_balance_slack)
        {
            return Err(SimError::Config("balance slacks must be in [0, 10]".into()));
        }
        if LatencyScenario::builtin(&self.scenario).is_none() {
            // Custom scenario names are fine as long as traces define them;
            // the engine re-checks against the trace.
        }
        self.timing.validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn total_servers(&self) -> u32 {
        self.clusters * self.servers_per_cluster
    }

    pub fn total_pools(&self) -> u32 {
        self.total_servers() / self.pool_sockets
    }

    pub fn pool_slices_per_group(&self) -> u32 {
        self.pool_sockets * self.pool_gb_per_socket
    }

    pub fn pool_of_server(&self, server: u32) -> u32 {
        server / self.pool_sockets
    }

    /// Host port index of a server on its pool's memory controller.
    pub fn host_on_pool(&self, server: u32) -> u16 {
        (server % self.pool_sockets) as u16
    }

    pub fn cluster_of_server(&self, server: u32) -> u32 {
        server / self.servers_per_cluster
    }

    pub fn effective_buffer_target(&self) -> u32 {
        if self.buffer_target_slices > 0 {
            self.buffer_target_slices
        } else {
            (self.pool_slices_per_group() / 100).max(8)
        }
    }

    pub fn total_local_dram_gb(&self) -> u64 {
        self.total_servers() as u64 * self.local_dram_gb_per_server as u64
    }
}

/// Memory allocation policy executed by a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Every VM fully on server-local DRAM; the savings baseline.
    AllLocal,
    /// Every VM gets a fixed fraction of its memory on the pool,
    /// rounded down to whole GBs.
    StaticPool { fraction: f64 },
    /// Prediction-driven splits with QoS mitigation.
    Pond {
        combined: CombinedConfig,
        classifier: ClassifierKind,
    },
}

impl Policy {
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            Policy::AllLocal => Ok(()),
            Policy::StaticPool { fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(SimError::Config(format!(
                        "static pool fraction {fraction} outside [0,1]"
                    )));
                }
                Ok(())
            }
            Policy::Pond { combined, .. } => {
                combined.validate().map_err(|e| SimError::Config(e.to_string()))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Policy::AllLocal => "all-local".to_string(),
            Policy::StaticPool { fraction } => format!("static:{fraction}"),
            Policy::Pond { combined, classifier } => format!(
                "pond:pdm={},tp={},model={}",
                combined.pdm,
                combined.tp_pct,
                match classifier {
                    ClassifierKind::DramBoundThreshold => "threshold",
                    ClassifierKind::Forest => "forest",
                }
            ),
        }
    }

    /// Accounting margin: the policy's own PDM for prediction-driven runs,
    /// the cluster default otherwise.
    pub fn pdm(&self, qos: &QosConfig) -> f64 {
        match self {
            Policy::Pond { combined, .. } => combined.pdm,
            _ => qos.pdm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_cluster_is_valid() {
        ClusterConfig::default().validate().unwrap();
    }

    #[test]
    fn pool_group_mapping() {
        let c = ClusterConfig::default();
        assert_eq!(c.total_pools(), 8);
        assert_eq!(c.pool_of_server(0), 0);
        assert_eq!(c.pool_of_server(17), 1);
        assert_eq!(c.host_on_pool(17), 1);
        assert_eq!(c.pool_slices_per_group(), 16 * 192);
    }

    #[test]
    fn pool_size_must_divide_servers() {
        let c = ClusterConfig {
            servers_per_cluster: 40,
            pool_sockets: 16,
            ..ClusterConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unsupported_pool_socket_count_rejected() {
        let c = ClusterConfig {
            pool_sockets: 12,
            servers_per_cluster: 48,
            ..ClusterConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn static_fraction_validated() {
        assert!(Policy::StaticPool { fraction: 1.5 }.validate().is_err());
        assert!(Policy::StaticPool { fraction: 0.15 }.validate().is_ok());
    }
}
