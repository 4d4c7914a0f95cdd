//! Combined model: split the violation budget between the classifier's
//! false positives and the quantile model's overpredictions so that the
//! total pool share LI + UM is maximal while FP + OP stays within
//! 100 - TP.

use serde::{Deserialize, Serialize};

use super::curves::{TradeoffCurves, CURVE_GRID_LEN};
use super::PredictorError;

/// Performance contract of a run: the allowed slowdown per VM and the share
/// of VMs that must stay within it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedConfig {
    /// Performance degradation margin as a fraction, e.g. 0.05.
    pub pdm: f64,
    /// Target percentage of VMs meeting the margin, e.g. 98.0.
    pub tp_pct: f64,
}

impl CombinedConfig {
    pub fn new(pdm: f64, tp_pct: f64) -> Result<Self, PredictorError> {
        let cfg = Self { pdm, tp_pct };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if !(self.pdm > 0.0 && self.pdm <= 0.25) {
            return Err(PredictorError::Config(format!(
                "pdm {} outside (0, 0.25]",
                self.pdm
            )));
        }
        if !(self.tp_pct > 50.0 && self.tp_pct <= 100.0) {
            return Err(PredictorError::Config(format!(
                "tp_pct {} outside (50, 100]",
                self.tp_pct
            )));
        }
        Ok(())
    }

    /// Violation budget 100 - TP, in tenths of a percentage point.
    pub fn budget_tenths(&self) -> usize {
        (((100.0 - self.tp_pct) * 10.0).round().max(0.0) as usize).min(CURVE_GRID_LEN - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedSolution {
    pub fp_pct: f64,
    pub op_pct: f64,
    /// LI(fp) + UM(op) at the optimum.
    pub objective: f64,
}

/// Exhaustive search over the 0.1pp grid of (FP, OP) pairs with
/// FP + OP <= 100 - TP, maximizing LI(FP) + UM(OP). Ties break toward the
/// smaller FP, then the smaller OP.
pub fn solve_combined(
    curves: &TradeoffCurves,
    cfg: &CombinedConfig,
) -> Result<CombinedSolution, PredictorError> {
    cfg.validate()?;
    curves.validate()?;
    let budget = cfg.budget_tenths();
    let mut best = CombinedSolution {
        fp_pct: 0.0,
        op_pct: 0.0,
        objective: curves.li_of_fp[0] + curves.um_of_op[0],
    };
    for fp_t in 0..=budget {
        for op_t in 0..=(budget - fp_t) {
            let objective = curves.li_of_fp[fp_t] + curves.um_of_op[op_t];
            if objective > best.objective {
                best = CombinedSolution {
                    fp_pct: fp_t as f64 / 10.0,
                    op_pct: op_t as f64 / 10.0,
                    objective,
                };
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_curves(li_slope: f64, um_slope: f64) -> TradeoffCurves {
        TradeoffCurves {
            li_of_fp: (0..CURVE_GRID_LEN)
                .map(|t| (li_slope * t as f64 / 10.0).min(100.0))
                .collect(),
            um_of_op: (0..CURVE_GRID_LEN)
                .map(|t| (um_slope * t as f64 / 10.0).min(100.0))
                .collect(),
        }
    }

    #[test]
    fn zero_budget_returns_origin() {
        let curves = linear_curves(1.0, 2.0);
        let cfg = CombinedConfig::new(0.05, 100.0).unwrap();
        let got = solve_combined(&curves, &cfg).unwrap();
        assert_eq!(got.fp_pct, 0.0);
        assert_eq!(got.op_pct, 0.0);
        assert_eq!(got.objective, curves.li_of_fp[0] + curves.um_of_op[0]);
    }

    #[test]
    fn linear_curves_spend_budget_on_steeper_side() {
        // LI(f) = f, UM(o) = 2o, budget 2pp: all budget on OP.
        let curves = linear_curves(1.0, 2.0);
        let cfg = CombinedConfig::new(0.05, 98.0).unwrap();
        let got = solve_combined(&curves, &cfg).unwrap();
        assert_eq!(got.fp_pct, 0.0);
        assert_eq!(got.op_pct, 2.0);
        assert!((got.objective - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_smaller_fp_then_smaller_op() {
        // Flat curves: every feasible pair has equal objective.
        let curves = TradeoffCurves {
            li_of_fp: vec![10.0; CURVE_GRID_LEN],
            um_of_op: vec![20.0; CURVE_GRID_LEN],
        };
        let cfg = CombinedConfig::new(0.05, 95.0).unwrap();
        let got = solve_combined(&curves, &cfg).unwrap();
        assert_eq!((got.fp_pct, got.op_pct), (0.0, 0.0));
    }

    #[test]
    fn budget_respected() {
        let curves = linear_curves(3.0, 2.0);
        for tp in [90.0, 95.5, 98.0, 99.9] {
            let cfg = CombinedConfig::new(0.05, tp).unwrap();
            let got = solve_combined(&curves, &cfg).unwrap();
            assert!(got.fp_pct + got.op_pct <= 100.0 - tp + 1e-9);
        }
    }

    #[test]
    fn objective_monotone_in_budget() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        for _ in 0..50 {
            let curve = |rng: &mut rand_chacha::ChaCha12Rng| {
                let mut acc = 0.0f64;
                (0..CURVE_GRID_LEN)
                    .map(|_| {
                        if rng.random::<f64>() < 0.1 {
                            acc += rng.random::<f64>() * 2.0;
                        }
                        acc.min(100.0)
                    })
                    .collect::<Vec<f64>>()
            };
            let curves = TradeoffCurves {
                li_of_fp: curve(&mut rng),
                um_of_op: curve(&mut rng),
            };
            let mut prev = f64::NEG_INFINITY;
            for tp in [99.9, 99.0, 98.0, 95.0, 90.0, 80.0, 60.0] {
                let got =
                    solve_combined(&curves, &CombinedConfig::new(0.05, tp).unwrap()).unwrap();
                assert!(
                    got.objective >= prev,
                    "objective dropped when budget grew (tp {tp})"
                );
                prev = got.objective;
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(CombinedConfig::new(0.0, 98.0).is_err());
        assert!(CombinedConfig::new(0.3, 98.0).is_err());
        assert!(CombinedConfig::new(0.05, 50.0).is_err());
        assert!(CombinedConfig::new(0.05, 101.0).is_err());
    }
}
