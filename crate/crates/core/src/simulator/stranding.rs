//! Stranded-memory measurement: free DRAM on servers whose cores are all
//! rented is unrentable. Samples are bucketed by the cluster's scheduled-core
//! percentage at the time of the snapshot.

use crate::control_plane::ServerState;

/// Point-in-time capacity view of every server.
#[derive(Debug, Clone)]
pub struct ClusterSnapshot {
    pub free_cores: Vec<u32>,
    pub free_local_gb: Vec<u32>,
    pub cores_per_server: u32,
    pub local_dram_gb_per_server: u32,
}

impl ClusterSnapshot {
    pub fn from_servers(servers: &[ServerState]) -> Self {
        Self {
            free_cores: servers.iter().map(|s| s.free_cores).collect(),
            free_local_gb: servers.iter().map(|s| s.free_local_gb).collect(),
            cores_per_server: servers.first().map_or(0, |s| s.cores),
            local_dram_gb_per_server: servers.first().map_or(0, |s| s.local_gb),
        }
    }
}

/// One stranding measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrandingSample {
    /// Lower edge of the 5pp scheduled-cores bucket, e.g. 75 for [75, 80).
    pub core_bucket_pct: u32,
    /// Stranded DRAM as a percentage of total DRAM.
    pub stranded_pct: f64,
    pub scheduled_cores_pct: f64,
}

/// Stranded GB = free local DRAM on servers with zero free cores.
pub fn measure_stranding(snapshot: &ClusterSnapshot) -> StrandingSample {
    let n = snapshot.free_cores.len();
    let total_cores = (snapshot.cores_per_server as u64) * n as u64;
    let total_dram = (snapshot.local_dram_gb_per_server as u64) * n as u64;
    let free_cores: u64 = snapshot.free_cores.iter().map(|&c| c as u64).sum();
    let stranded_gb: u64 = snapshot
        .free_cores
        .iter()
        .zip(&snapshot.free_local_gb)
        .filter(|(&fc, _)| fc == 0)
        .map(|(_, &gb)| gb as u64)
        .sum();
    let scheduled_pct = if total_cores == 0 {
        0.0
    } else {
        100.0 * (total_cores - free_cores) as f64 / total_cores as f64
    };
    let stranded_pct = if total_dram == 0 {
        0.0
    } else {
        100.0 * stranded_gb as f64 / total_dram as f64
    };
    StrandingSample {
        core_bucket_pct: ((scheduled_pct / 5.0).floor() as u32 * 5).min(95),
        stranded_pct,
        scheduled_cores_pct: scheduled_pct,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(free_cores: Vec<u32>, free_gb: Vec<u32>) -> ClusterSnapshot {
        ClusterSnapshot {
            free_cores,
            free_local_gb: free_gb,
            cores_per_server: 10,
            local_dram_gb_per_server: 100,
        }
    }

    #[test]
    fn server_with_free_cores_strands_nothing() {
        let s = snapshot(vec![1, 10], vec![50, 100]);
        let got = measure_stranding(&s);
        assert_eq!(got.stranded_pct, 0.0);
    }

    #[test]
    fn full_core_server_strands_its_free_dram() {
        let s = snapshot(vec![0, 10], vec![100, 100]);
        let got = measure_stranding(&s);
        // 100GB stranded of 200GB total.
        assert_eq!(got.stranded_pct, 50.0);
        assert_eq!(got.core_bucket_pct, 50);
    }

    #[test]
    fn bucket_is_5pp_floor() {
        let s = snapshot(vec![0, 4], vec![0, 0]);
        // 16 of 20 cores scheduled = 80%.
        assert_eq!(measure_stranding(&s).core_bucket_pct, 80);
    }
}
