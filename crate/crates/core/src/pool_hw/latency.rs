//! Pool topology and the access-latency overhead it implies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PoolHwError;

/// A latency environment used to label workload slowdowns. The name keys the
/// per-scenario slowdown entries in trace ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyScenario {
    pub name: String,
    pub local_ns: f64,
    pub pool_ns: f64,
}

impl LatencyScenario {
    pub fn new(name: &str, local_ns: f64, pool_ns: f64) -> Result<Self, PoolHwError> {
        let s = Self {
            name: name.to_string(),
            local_ns,
            pool_ns,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PoolHwError> {
        if !(self.pool_ns > self.local_ns && self.local_ns > 0.0) {
            return Err(PoolHwError::Config(format!(
                "scenario {}: pool_ns must exceed local_ns (got {} vs {})",
                self.name, self.pool_ns, self.local_ns
            )));
        }
        Ok(())
    }

    /// 78ns local vs 142ns pool: memory latency rises to 182% of local.
    pub fn lat182() -> Self {
        Self::new("lat182", 78.0, 142.0).unwrap()
    }

    /// 115ns local vs 255ns pool: memory latency rises to 222% of local.
    pub fn lat222() -> Self {
        Self::new("lat222", 115.0, 255.0).unwrap()
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "lat182" => Some(Self::lat182()),
            "lat222" => Some(Self::lat222()),
            _ => None,
        }
    }
}

/// Socket counts a pool can span. Up to 16 sockets connect to the memory
/// controller directly; 32 and 64 socket pools go through a CXL switch.
pub const SUPPORTED_POOL_SOCKETS: [u32; 4] = [8, 16, 32, 64];

fn default_added_ns() -> BTreeMap<u32, f64> {
    // Direct attach measures 70-90ns over NUMA-local; switched pools pay
    // retimer and switch traversals and land past 180ns.
    BTreeMap::from([(8, 70.0), (16, 90.0), (32, 180.0), (64, 210.0)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolTopology {
    pub pool_sockets: u32,
    pub emcs_per_pool: u32,
    pub slices_per_emc: u32,
    pub uses_switch: bool,
    pub uses_retimers: bool,
    /// Added read latency vs NUMA-local, per supported socket count.
    #[serde(default = "default_added_ns")]
    pub added_ns: BTreeMap<u32, f64>,
}

impl PoolTopology {
    pub fn for_sockets(pool_sockets: u32) -> Result<Self, PoolHwError> {
        Self::new(pool_sockets, 1, 1024)
    }

    pub fn new(
        pool_sockets: u32,
        emcs_per_pool: u32,
        slices_per_emc: u32,
    ) -> Result<Self, PoolHwError> {
        let t = Self {
            pool_sockets,
            emcs_per_pool,
            slices_per_emc,
            uses_switch: pool_sockets > 16,
            uses_retimers: pool_sockets > 8,
            added_ns: default_added_ns(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PoolHwError> {
        if !SUPPORTED_POOL_SOCKETS.contains(&self.pool_sockets) {
            return Err(PoolHwError::Config(format!(
                "unsupported pool size: {} sockets (supported: {SUPPORTED_POOL_SOCKETS:?})",
                self.pool_sockets
            )));
        }
        if self.uses_switch != (self.pool_sockets > 16) {
            return Err(PoolHwError::Config(
                "pools above 16 sockets require a switch, smaller pools attach directly".into(),
            ));
        }
        if self.emcs_per_pool == 0 || self.slices_per_emc == 0 {
            return Err(PoolHwError::Config(
                "emcs_per_pool and slices_per_emc must be positive".into(),
            ));
        }
        let mut prev = f64::NEG_INFINITY;
        for (&sockets, &ns) in &self.added_ns {
            if ns < prev {
                return Err(PoolHwError::Config(format!(
                    "added_ns must be nondecreasing in pool size (violated at {sockets} sockets)"
                )));
            }
            prev = ns;
        }
        for sockets in self.added_ns.keys() {
            if !SUPPORTED_POOL_SOCKETS.contains(sockets) {
                return Err(PoolHwError::Config(format!(
                    "added_ns entry for unsupported socket count {sockets}"
                )));
            }
        }
        Ok(())
    }
}

/// Added nanoseconds of pool access latency vs NUMA-local for this topology.
pub fn pool_latency_ns(topo: &PoolTopology, base: &LatencyScenario) -> Result<f64, PoolHwError> {
    topo.validate()?;
    base.validate()?;
    topo.added_ns
        .get(&topo.pool_sockets)
        .copied()
        .ok_or_else(|| {
            PoolHwError::Config(format!(
                "no added_ns entry for {} sockets",
                topo.pool_sockets
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_pools_add_70_to_90_ns() {
        let base = LatencyScenario::lat182();
        assert_eq!(
            pool_latency_ns(&PoolTopology::for_sockets(8).unwrap(), &base).unwrap(),
            70.0
        );
        assert_eq!(
            pool_latency_ns(&PoolTopology::for_sockets(16).unwrap(), &base).unwrap(),
            90.0
        );
    }

    #[test]
    fn switched_pools_add_at_least_180_ns() {
        let base = LatencyScenario::lat222();
        for sockets in [32, 64] {
            let topo = PoolTopology::for_sockets(sockets).unwrap();
            assert!(topo.uses_switch);
            assert!(pool_latency_ns(&topo, &base).unwrap() >= 180.0);
        }
    }

    #[test]
    fn latency_monotone_in_pool_size() {
        let base = LatencyScenario::lat182();
        let mut prev = 0.0;
        for sockets in SUPPORTED_POOL_SOCKETS {
            let ns =
                pool_latency_ns(&PoolTopology::for_sockets(sockets).unwrap(), &base).unwrap();
            assert!(ns >= prev, "latency decreased at {sockets} sockets");
            prev = ns;
        }
    }

    #[test]
    fn unsupported_socket_count_rejected() {
        assert!(PoolTopology::for_sockets(12).is_err());
        assert!(PoolTopology::for_sockets(128).is_err());
    }

    #[test]
    fn scenario_requires_pool_slower_than_local() {
        assert!(LatencyScenario::new("x", 100.0, 90.0).is_err());
        assert!(LatencyScenario::builtin("lat182").is_some());
        assert!(LatencyScenario::builtin("nope").is_none());
    }
}
