//! Per-customer untouched-memory history and quantile prediction. A VM's
//! prediction is a low quantile of its customer's recent observations, so the
//! configured target directly bounds the expected overprediction rate.

use std::collections::BTreeMap;
use std::collections::VecDeque;

/// Percentile summaries kept per customer.
pub const SUMMARY_PERCENTILES: [f64; 5] = [50.0, 80.0, 90.0, 95.0, 99.0];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CustomerHistory {
    /// (observation day, minimum untouched fraction over the VM's lifetime).
    obs: VecDeque<(u32, f64)>,
    sorted: Vec<f64>,
    percentiles: [f64; 5],
}

impl CustomerHistory {
    fn rebuild(&mut self) {
        self.sorted = self.obs.iter().map(|(_, v)| *v).collect();
        self.sorted.sort_by(|a, b| a.total_cmp(b));
        for (slot, pct) in self.percentiles.iter_mut().zip(SUMMARY_PERCENTILES) {
            *slot = nearest_rank(&self.sorted, pct);
        }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.obs.iter().copied()
    }

    pub fn percentiles(&self) -> [f64; 5] {
        self.percentiles
    }
}

fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let n = sorted.len();
    let k = ((pct / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Ring of recent untouched-memory observations per customer, pruned to a
/// sliding window of simulated days.
#[derive(Debug, Clone, PartialEq)]
pub struct UntouchedHistory {
    window_days: u32,
    current_day: u32,
    per_customer: BTreeMap<String, CustomerHistory>,
}

impl UntouchedHistory {
    pub fn new(window_days: u32) -> Self {
        Self {
            window_days: window_days.max(1),
            current_day: 0,
            per_customer: BTreeMap::new(),
        }
    }

    pub fn window_days(&self) -> u32 {
        self.window_days
    }

    pub fn current_day(&self) -> u32 {
        self.current_day
    }

    pub fn customer(&self, customer: &str) -> Option<&CustomerHistory> {
        self.per_customer.get(customer)
    }

    pub fn customers(&self) -> impl Iterator<Item = (&str, &CustomerHistory)> {
        self.per_customer.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn has_history(&self, customer: &str) -> bool {
        self.per_customer
            .get(customer)
            .is_some_and(|h| !h.is_empty())
    }

    /// Inserts a day's worth of observations, prunes entries older than the
    /// window, and recomputes percentile summaries.
    pub fn ingest_batch<'a>(
        &mut self,
        day: u32,
        batch: impl IntoIterator<Item = (&'a str, f64)>,
    ) {
        self.current_day = self.current_day.max(day);
        for (customer, value) in batch {
            let entry = self.per_customer.entry(customer.to_string()).or_default();
            entry.obs.push_back((day, value.clamp(0.0, 1.0)));
        }
        let cutoff = self.current_day.saturating_sub(self.window_days);
        self.per_customer.retain(|_, h| {
            while h.obs.front().is_some_and(|(d, _)| *d <= cutoff && self.current_day > self.window_days) {
                h.obs.pop_front();
            }
            h.rebuild();
            !h.obs.is_empty()
        });
    }

    /// Quantile prediction of the customer's untouched fraction. The
    /// target overprediction rate (percent, in (0, 50]) selects the
    /// nearest-rank quantile of the customer's recent observations; a
    /// customer without history predicts 0 so the VM stays fully local.
    /// Degenerate targets also return 0.
    pub fn predict(&self, customer: &str, target_op_pct: f64) -> f64 {
        if !(target_op_pct > 0.0 && target_op_pct <= 50.0) {
            return 0.0;
        }
        match self.per_customer.get(customer) {
            None => 0.0,
            Some(h) => nearest_rank(&h.sorted, target_op_pct),
        }
    }

    /// Rebuilds a history from raw (customer, day, value) triples, e.g. when
    /// importing a model snapshot.
    pub fn from_observations<'a>(
        window_days: u32,
        current_day: u32,
        obs: impl IntoIterator<Item = (&'a str, u32, f64)>,
    ) -> Self {
        let mut per_customer: BTreeMap<String, CustomerHistory> = BTreeMap::new();
        for (customer, day, value) in obs {
            per_customer
                .entry(customer.to_string())
                .or_default()
                .obs
                .push_back((day, value));
        }
        for h in per_customer.values_mut() {
            h.rebuild();
        }
        let mut out = Self {
            window_days: window_days.max(1),
            current_day,
            per_customer,
        };
        // Normalize via a regular prune pass.
        out.ingest_batch(current_day, std::iter::empty());
        out
    }
}
