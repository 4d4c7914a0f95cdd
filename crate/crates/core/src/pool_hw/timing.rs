//! Memory online/offline timing. Offlining a slice is the slow path (tens of
//! milliseconds per GB); onlining is near instantaneous, which is why the
//! control plane keeps a ready buffer instead of offlining on demand.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PoolHwError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    /// Uniform sampling range for per-slice offline cost, in ms per GB.
    pub offline_ms_per_gb: (f64, f64),
    /// Onlining cost in microseconds per GB.
    pub online_us_per_gb: f64,
    /// One-time reconfiguration copy cost: 50ms per GB of pool memory.
    pub migration_ms_per_pool_gb: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            offline_ms_per_gb: (10.0, 100.0),
            online_us_per_gb: 5.0,
            migration_ms_per_pool_gb: 50.0,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), PoolHwError> {
        let (lo, hi) = self.offline_ms_per_gb;
        if !(lo >= 10.0 && hi <= 100.0 && lo <= hi) {
            return Err(PoolHwError::Config(format!(
                "offline_ms_per_gb must lie within [10,100], got ({lo},{hi})"
            )));
        }
        // Offlining must be at least three orders of magnitude slower than onlining.
        if lo * 1000.0 < self.online_us_per_gb * 1000.0 {
            return Err(PoolHwError::Config(
                "offline cost must be >= 1000x online cost per GB".into(),
            ));
        }
        if self.migration_ms_per_pool_gb <= 0.0 {
            return Err(PoolHwError::Config("migration cost must be positive".into()));
        }
        Ok(())
    }

    /// Samples one slice's offline duration in milliseconds.
    pub fn sample_offline_ms<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.offline_ms_per_gb;
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }

    pub fn migration_ms(&self, pool_gb: u32) -> f64 {
        self.migration_ms_per_pool_gb * pool_gb as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn defaults_are_valid_and_offline_dominates_online() {
        let t = TimingModel::default();
        t.validate().unwrap();
        assert!(t.offline_ms_per_gb.0 * 1000.0 >= t.online_us_per_gb * 1000.0);
    }

    #[test]
    fn offline_samples_stay_in_range() {
        let t = TimingModel::default();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let ms = t.sample_offline_ms(&mut rng);
            assert!((10.0..=100.0).contains(&ms));
        }
    }

    #[test]
    fn migration_cost_is_50ms_per_gb() {
        assert_eq!(TimingModel::default().migration_ms(4), 200.0);
    }

    #[test]
    fn out_of_range_offline_cost_rejected() {
        let mut t = TimingModel::default();
        t.offline_ms_per_gb = (5.0, 100.0);
        assert!(t.validate().is_err());
    }
}
