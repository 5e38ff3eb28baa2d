//! Backward-induction learning of a multi-stage rule with the sequential AIPW
//! pseudo-outcome.

use serde::{Deserialize, Serialize};

use crate::config::LearnerConfig;
use crate::data::{Direction, LongitudinalDataset, RuleCovariateSpec};
use crate::error::{Error, Result};
use crate::learners::CrossFitPlan;
use crate::rule::{BlipRule, CrossFitBlipRule, TreatmentRule};
use crate::scalar::Real;
use crate::single::{aipw_unit, fit_stage, FittedODTRStage, NuisanceEstimates, PseudoOutcomeVector};

/// What later stages contribute to an earlier stage's pseudo-outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCache<T> {
    pub nuisances: NuisanceEstimates<T>,
    /// Observed `A_t`.
    pub a: Vec<u8>,
    /// Learned assignment `d_t`.
    pub d: Vec<u8>,
}

impl<T: Real> StageCache<T> {
    /// `1(A_t = d_t)` per unit.
    pub fn compliance(&self) -> Vec<u8> {
        self.a.iter().zip(&self.d).map(|(a, d)| (a == d) as u8).collect()
    }

    fn weight(&self, i: usize) -> T {
        if self.a[i] == self.d[i] {
            T::one() / self.nuisances.g[i]
        } else {
            T::zero()
        }
    }
}

/// `Q_t(H_t, d_t)`: the regression target handed to stage `t - 1`.
pub fn pseudo_outcome_update<T: Real>(cache: &StageCache<T>) -> Vec<T> {
    cache.nuisances.at_assignment(&cache.d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialTransform<T> {
    pub pseudo: PseudoOutcomeVector<T>,
    /// Units whose cumulative weight product exceeded the cap.
    pub capped: usize,
}

/// Sequential AIPW pseudo-outcome at the current stage.
///
/// `future` holds the caches of stages `t + 1..=tau` in order; it is empty at
/// the last stage, where the transform coincides with the single-stage one.
/// The residual is built backwards, `R_s = Q_{s+1}(d_{s+1}) - Q_s(A_s) +
/// w_{s+1} R_{s+1}` with `w = 1(A = d) / g` and `Q_{tau+1} = Y`. Units whose
/// products `w_{t+1} ... w_s` exceed `weight_cap` are recomputed with each
/// product truncated at the cap.
pub fn sequential_aipw_transform<T: Real>(
    current: &NuisanceEstimates<T>,
    a_t: &[u8],
    future: &[StageCache<T>],
    y: &[T],
    weight_cap: T,
) -> Result<SequentialTransform<T>> {
    let n = current.n();
    if a_t.len() != n || y.len() != n {
        return Err(Error::Dimension("current stage, treatment and outcome lengths differ".into()));
    }
    if future.iter().any(|c| c.nuisances.n() != n || c.a.len() != n || c.d.len() != n) {
        return Err(Error::Dimension("stage caches must all cover the same units".into()));
    }
    let next_values: Vec<Vec<T>> = future.iter().map(pseudo_outcome_update).collect();
    let m = future.len();
    // Stage j = 0 is the current one; j >= 1 is future[j - 1].
    let qa = |j: usize, i: usize| if j == 0 { current.qa[i] } else { future[j - 1].nuisances.qa[i] };
    let next = |j: usize, i: usize| if j == m { y[i] } else { next_values[j][i] };

    let mut capped = 0;
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = next(m, i) - qa(m, i);
        let mut max_product = T::one();
        for j in (0..m).rev() {
            let w = future[j].weight(i);
            r = next(j, i) - qa(j, i) + w * r;
            max_product = (w * max_product).max(T::one());
        }
        if max_product > weight_cap {
            capped += 1;
            let mut product = T::one();
            r = T::zero();
            for j in 0..=m {
                if j > 0 {
                    product *= future[j - 1].weight(i);
                }
                r += product.min(weight_cap) * (next(j, i) - qa(j, i));
            }
        }
        d.push(aipw_unit(a_t[i], current.g[i], r, current.q1[i], current.q0[i]));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudo-outcome"));
    }
    Ok(SequentialTransform {
        pseudo: PseudoOutcomeVector { d },
        capped,
    })
}

/// A learned rule sequence, one stage per decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FittedODTR<T> {
    pub direction: Direction,
    pub rule_covariates: RuleCovariateSpec,
    pub stages: Vec<FittedODTRStage<T>>,
}

impl<T: Real> FittedODTR<T> {
    pub fn tau(&self) -> usize {
        self.stages.len()
    }

    /// Rule from the full-data blip models; applicable to new data.
    pub fn rule(&self) -> TreatmentRule<T> {
        TreatmentRule::LearnedBlip(BlipRule {
            direction: self.direction,
            stages: self.stages.iter().map(|s| s.blip.clone()).collect(),
        })
    }

    /// Rule assigning each training unit with blip models that excluded its
    /// fold. Falls back to [`Self::rule`] when the blips were not cross-fit.
    pub fn in_sample_rule(&self) -> TreatmentRule<T> {
        let stages: Option<Vec<_>> = self.stages.iter().map(|s| s.cross_fit.clone()).collect();
        match stages {
            Some(stages) => TreatmentRule::CrossFitBlip(CrossFitBlipRule {
                direction: self.direction,
                stages,
            }),
            None => self.rule(),
        }
    }
}

/// Per-stage intermediate results of a learning run.
#[derive(Debug, Clone)]
pub struct LearningTrace<T> {
    /// Pseudo-outcomes per stage, index `t - 1`.
    pub pseudo_outcomes: Vec<PseudoOutcomeVector<T>>,
    /// In-sample assignments per stage, index `t - 1`.
    pub assignments: Vec<Vec<u8>>,
    pub caches: Vec<StageCache<T>>,
}

/// Learns all `tau` stages backwards from the last decision point. Stage `t`
/// uses folds `cfg.plan(n, seed, t)`.
pub fn learn_odtr<T: Real>(
    data: &LongitudinalDataset<T>,
    vspec: &RuleCovariateSpec,
    cfg: &LearnerConfig,
    direction: Direction,
    seed: u64,
) -> Result<FittedODTR<T>> {
    let plans = (1..=data.tau())
        .map(|t| cfg.plan(data.n_units(), seed, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(learn_odtr_with_plans(data, vspec, cfg, direction, &plans)?.0)
}

/// [`learn_odtr`] with explicit per-stage folds, also returning the trace.
pub fn learn_odtr_with_plans<T: Real>(
    data: &LongitudinalDataset<T>,
    vspec: &RuleCovariateSpec,
    cfg: &LearnerConfig,
    direction: Direction,
    plans: &[CrossFitPlan],
) -> Result<(FittedODTR<T>, LearningTrace<T>)> {
    cfg.validate()?;
    vspec.validate(data)?;
    let tau = data.tau();
    if plans.len() != tau {
        return Err(Error::InvalidPlan(format!("{} fold plans for {tau} stages", plans.len())));
    }
    let y = data.outcome();
    let cap = cfg.weight_cap();
    let mut target = y.to_vec();
    let mut future: Vec<StageCache<T>> = Vec::with_capacity(tau);
    let mut stages = Vec::with_capacity(tau);
    let mut pseudo_outcomes = Vec::with_capacity(tau);
    let mut assignments = Vec::with_capacity(tau);

    for t in (1..=tau).rev() {
        let a = data.treatment(t);
        let fit = fit_stage(data, t, &target, vspec.columns_at(t), cfg, direction, &plans[t - 1], |nuis| {
            let s = sequential_aipw_transform(nuis, a, &future, y, cap)?;
            Ok((s.pseudo, s.capped))
        })
        .map_err(|e| e.at_stage(t))?;
        let cache = StageCache {
            nuisances: fit.nuisances,
            a: a.to_vec(),
            d: fit.assignments.clone(),
        };
        target = pseudo_outcome_update(&cache);
        future.insert(0, cache);
        stages.push(fit.stage);
        pseudo_outcomes.push(fit.pseudo);
        assignments.push(fit.assignments);
    }
    stages.reverse();
    pseudo_outcomes.reverse();
    assignments.reverse();
    Ok((
        FittedODTR {
            direction,
            rule_covariates: vspec.clone(),
            stages,
        },
        LearningTrace {
            pseudo_outcomes,
            assignments,
            caches: future,
        },
    ))
}
