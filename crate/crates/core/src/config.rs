//! Learner configuration shared by rule learning and policy evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{CrossFitPlan, Family, LearnerSpec, Penalty, SuperLearnerSpec};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Library for `Q_t`, fit on `(H_t, A_t)`.
    pub outcome: SuperLearnerSpec,
    /// Library for `g_t`, fit on `H_t`.
    pub propensity: SuperLearnerSpec,
    /// Library for the blip, fit on `V_t` with squared loss.
    pub blip: SuperLearnerSpec,
    pub outcome_family: Family,
    pub cross_fit_blip: bool,
    /// Propensities of the observed arm are clipped to `[g_min, 1 - g_min]`.
    pub g_min: f64,
    /// Cap on cumulative inverse-propensity products.
    pub weight_cap: f64,
    /// Folds per stage; `None` picks `CrossFitPlan::default_folds(n)`.
    pub folds: Option<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            outcome: SuperLearnerSpec::new(vec![
                LearnerSpec::PenalizedLinear {
                    lambda: 1e-3,
                    penalty: Penalty::Lasso,
                    interactions: true,
                },
                LearnerSpec::GradientBoostedTrees {
                    num_trees: 50,
                    max_depth: 3,
                    learning_rate: 0.2,
                    min_leaf_size: 20,
                },
            ]),
            propensity: SuperLearnerSpec::new(vec![LearnerSpec::Intercept, LearnerSpec::logistic(1e-4)]),
            blip: SuperLearnerSpec::new(vec![LearnerSpec::Intercept, LearnerSpec::lasso(0.05)]),
            outcome_family: Family::Squared,
            cross_fit_blip: true,
            g_min: 0.01,
            weight_cap: 1e4,
            folds: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.outcome.validate(self.outcome_family)?;
        self.propensity.validate(Family::Binomial)?;
        self.blip.validate(Family::Squared)?;
        if !(self.g_min > 0.0 && self.g_min < 0.5) {
            return Err(Error::Config(format!("g_min must lie in (0, 0.5), got {}", self.g_min)));
        }
        if !self.weight_cap.is_finite() || self.weight_cap < 1.0 {
            return Err(Error::Config(format!("weight_cap must be finite and >= 1, got {}", self.weight_cap)));
        }
        if let Some(k) = self.folds {
            if k < 2 {
                return Err(Error::Config(format!("folds must be >= 2, got {k}")));
            }
        }
        Ok(())
    }

    pub fn fold_count(&self, n: usize) -> usize {
        self.folds.unwrap_or_else(|| CrossFitPlan::default_folds(n))
    }

    /// Folds for decision point `t` of a run seeded with `seed`.
    pub fn plan(&self, n: usize, seed: u64, t: usize) -> Result<CrossFitPlan> {
        CrossFitPlan::for_stream(n, self.fold_count(n), seed, t as u64)
    }

    pub(crate) fn g_min<T: Real>(&self) -> T {
        T::lit(self.g_min)
    }

    pub(crate) fn weight_cap<T: Real>(&self) -> T {
        T::lit(self.weight_cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = LearnerConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<LearnerConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: LearnerConfig = serde_json::from_str(r#"{"g_min": 0.05, "folds": 5}"#).unwrap();
        assert_eq!(cfg.g_min, 0.05);
        assert_eq!(cfg.folds, Some(5));
        assert!(cfg.cross_fit_blip);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            LearnerConfig { g_min: 0.0, ..Default::default() },
            LearnerConfig { g_min: 0.5, ..Default::default() },
            LearnerConfig { weight_cap: 0.5, ..Default::default() },
            LearnerConfig { folds: Some(1), ..Default::default() },
            LearnerConfig {
                propensity: SuperLearnerSpec::single(LearnerSpec::lasso(0.1)),
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(serde_json::from_str::<LearnerConfig>(r#"{"gmin": 0.1}"#).is_err());
    }
}
