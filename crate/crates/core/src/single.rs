//! Single decision point DR-learner: cross-fitted nuisances, the AIPW
//! pseudo-outcome, and a blip regression whose sign gives the rule.

use serde::{Deserialize, Serialize};

use crate::config::LearnerConfig;
use crate::data::{history_at, rule_features, Direction, LongitudinalDataset, RuleCovariateSpec};
use crate::error::{Error, Result};
use crate::learners::{
    check_both_arms, cross_fit, discrete_super_learner, fit, CrossFitPlan, Family, FittedModel, LearnerSpec,
    SuperLearnerSpec,
};
use crate::matrix::FeatureMatrix;
use crate::rule::{assign_from_blip, CrossFitBlipStage};
use crate::scalar::{mean, sample_sd, Real};

/// Cross-fitted outcome and propensity predictions at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates<T> {
    /// `Q(H, 1)`
    pub q1: Vec<T>,
    /// `Q(H, 0)`
    pub q0: Vec<T>,
    /// `Q(H, A)` at the observed treatment.
    pub qa: Vec<T>,
    /// Clipped probability of the observed treatment.
    pub g: Vec<T>,
    /// Units whose propensity hit the clipping bound.
    pub clipped: usize,
    pub outcome_learner: usize,
    pub propensity_learner: usize,
}

impl<T: Real> NuisanceEstimates<T> {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    /// `Q(H, d)` for per-unit assignments `d`.
    pub fn at_assignment(&self, d: &[u8]) -> Vec<T> {
        d.iter()
            .enumerate()
            .map(|(i, &di)| if di == 1 { self.q1[i] } else { self.q0[i] })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomeVector<T> {
    pub d: Vec<T>,
}

/// Probability of the observed arm, `A p + (1 - A)(1 - p)`, clipped to
/// `[g_min, 1 - g_min]`. Returns the clipped values and how many were moved.
pub fn propensity_of_observed<T: Real>(p: &[T], a: &[u8], g_min: T) -> (Vec<T>, usize) {
    let hi = T::one() - g_min;
    let mut clipped = 0;
    let g = p
        .iter()
        .zip(a)
        .map(|(&p, &a)| {
            let g = if a == 1 { p } else { T::one() - p };
            if g < g_min {
                clipped += 1;
                g_min
            } else if g > hi {
                clipped += 1;
                hi
            } else {
                g
            }
        })
        .collect();
    (g, clipped)
}

/// `H_t` followed by the treatment column `A_t`.
pub fn outcome_features<T: Real>(data: &LongitudinalDataset<T>, t: usize) -> Result<FeatureMatrix<T>> {
    let mut x = history_at(data, t)?.features(data);
    let a = data.treatment(t).iter().map(|&v| T::from_count(v as usize)).collect();
    x.push_column(data.treatment_name(t), a)?;
    Ok(x)
}

/// Cross-fits `Q_t` on `(H_t, A_t)` against `target` and `g_t` on `H_t`.
/// Counterfactual predictions reuse each unit's held-out model.
pub fn estimate_nuisances<T: Real>(
    data: &LongitudinalDataset<T>,
    t: usize,
    target: &[T],
    cfg: &LearnerConfig,
    plan: &CrossFitPlan,
) -> Result<NuisanceEstimates<T>> {
    data.check_time(t)?;
    if target.len() != data.n_units() {
        return Err(Error::Dimension(format!(
            "target has {} entries, dataset has {} units",
            target.len(),
            data.n_units()
        )));
    }
    let a = data.treatment(t);
    check_both_arms(a, plan)?;

    let xq = outcome_features(data, t)?;
    let a_name = data.treatment_name(t);
    let q = cross_fit(&cfg.outcome, &xq, target, cfg.outcome_family, plan)?;
    let q1 = q.predict_held_out(plan, &xq.with_constant(a_name, T::one())?)?;
    let q0 = q.predict_held_out(plan, &xq.with_constant(a_name, T::zero())?)?;
    let qa = a
        .iter()
        .enumerate()
        .map(|(i, &ai)| if ai == 1 { q1[i] } else { q0[i] })
        .collect();

    let xg = history_at(data, t)?.features(data);
    let a_real: Vec<T> = a.iter().map(|&v| T::from_count(v as usize)).collect();
    let gfit = cross_fit(&cfg.propensity, &xg, &a_real, Family::Binomial, plan)?;
    let (g, clipped) = propensity_of_observed(&gfit.predictions, a, cfg.g_min());

    Ok(NuisanceEstimates {
        q1,
        q0,
        qa,
        g,
        clipped,
        outcome_learner: q.selected,
        propensity_learner: gfit.selected,
    })
}

/// One unit's transform given its residual `r`.
#[inline]
pub(crate) fn aipw_unit<T: Real>(a: u8, g: T, r: T, q1: T, q0: T) -> T {
    let sign = if a == 1 { T::one() } else { -T::one() };
    sign / g * r + (q1 - q0)
}

fn check_aligned<T: Real>(n: usize, y: &[T], a: &[u8]) -> Result<()> {
    if y.len() != n || a.len() != n {
        return Err(Error::Dimension(format!(
            "outcome ({}) and treatment ({}) must match nuisances ({n})",
            y.len(),
            a.len()
        )));
    }
    Ok(())
}

/// `D = (2A - 1) / g * (Y - Q(H, A)) + Q(H, 1) - Q(H, 0)`.
pub fn aipw_transform<T: Real>(y: &[T], nuis: &NuisanceEstimates<T>, a: &[u8]) -> Result<PseudoOutcomeVector<T>> {
    check_aligned(nuis.n(), y, a)?;
    let d: Vec<T> = (0..y.len())
        .map(|i| aipw_unit(a[i], nuis.g[i], y[i] - nuis.qa[i], nuis.q1[i], nuis.q0[i]))
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pseudo-outcome"));
    }
    Ok(PseudoOutcomeVector { d })
}

/// Blip regression of pseudo-outcomes on `V`.
#[derive(Debug, Clone)]
pub struct BlipFit<T> {
    /// Winner refit on all rows; used on new data.
    pub model: FittedModel<T>,
    /// Fold models, present when cross-fitting.
    pub cross_fit: Option<CrossFitBlipStage<T>>,
    /// In-sample blip, held-out when cross-fitting.
    pub predictions: Vec<T>,
    pub selected: usize,
}

/// Regresses `d` on `v`. An empty `v` always fits an intercept.
pub fn fit_blip<T: Real>(
    d: &PseudoOutcomeVector<T>,
    v: &FeatureMatrix<T>,
    library: &SuperLearnerSpec,
    plan: &CrossFitPlan,
    cross_fitted: bool,
) -> Result<BlipFit<T>> {
    let intercept_only = SuperLearnerSpec::single(LearnerSpec::Intercept);
    let library = if v.n_cols() == 0 { &intercept_only } else { library };
    if cross_fitted {
        let cf = cross_fit(library, v, &d.d, Family::Squared, plan)?;
        let model = fit(&library.library[cf.selected], v, &d.d, Family::Squared)?;
        Ok(BlipFit {
            model,
            cross_fit: Some(CrossFitBlipStage {
                folds: plan.assignment().to_vec(),
                models: cf.models,
            }),
            predictions: cf.predictions,
            selected: cf.selected,
        })
    } else {
        let sl = discrete_super_learner(library, v, &d.d, Family::Squared, plan)?;
        let predictions = sl.model.predict(v)?;
        Ok(BlipFit {
            model: sl.model,
            cross_fit: None,
            predictions,
            selected: sl.selected,
        })
    }
}

/// Summary of one learned stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StageDiagnostics {
    pub fraction_treated: f64,
    pub mean_blip: f64,
    /// Share of units with `|blip|` below a thousandth of the pseudo-outcome sd.
    pub near_zero_blip_fraction: f64,
    pub clipped_propensities: usize,
    /// Units whose cumulative weight product exceeded the cap.
    pub capped_weights: usize,
    pub outcome_learner: usize,
    pub propensity_learner: usize,
    pub blip_learner: usize,
    /// Non-zero blip slopes of the full-data model, when linear.
    pub blip_nonzero_slopes: Option<usize>,
}

/// Learned rule for one decision point: `I(B(V) > 0)` when maximizing,
/// `I(B(V) < 0)` when minimizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FittedODTRStage<T> {
    pub t: usize,
    pub rule_covariates: Vec<String>,
    pub direction: Direction,
    pub blip: FittedModel<T>,
    /// Fold models for in-sample assignment. Not serialized.
    #[serde(skip)]
    pub cross_fit: Option<CrossFitBlipStage<T>>,
    pub diagnostics: StageDiagnostics,
}

impl<T: Real> FittedODTRStage<T> {
    /// Assignments for any dataset supplying `V_t`.
    pub fn assign(&self, data: &LongitudinalDataset<T>) -> Result<Vec<u8>> {
        let v = rule_features(data, self.t, &self.rule_covariates)?;
        Ok(self
            .blip
            .predict(&v)?
            .into_iter()
            .map(|b| assign_from_blip(b, self.direction))
            .collect())
    }
}

/// Everything one stage produces while learning.
#[derive(Debug, Clone)]
pub(crate) struct StageFit<T> {
    pub stage: FittedODTRStage<T>,
    pub nuisances: NuisanceEstimates<T>,
    pub pseudo: PseudoOutcomeVector<T>,
    /// In-sample assignments (held-out when the blip is cross-fit).
    pub assignments: Vec<u8>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_stage<T: Real>(
    data: &LongitudinalDataset<T>,
    t: usize,
    target: &[T],
    v_names: &[String],
    cfg: &LearnerConfig,
    direction: Direction,
    plan: &CrossFitPlan,
    transform: impl FnOnce(&NuisanceEstimates<T>) -> Result<(PseudoOutcomeVector<T>, usize)>,
) -> Result<StageFit<T>> {
    let v = rule_features(data, t, v_names)?;
    let nuisances = estimate_nuisances(data, t, target, cfg, plan)?;
    let (pseudo, capped_weights) = transform(&nuisances)?;
    let blip = fit_blip(&pseudo, &v, &cfg.blip, plan, cfg.cross_fit_blip)?;
    let assignments: Vec<u8> = blip.predictions.iter().map(|&b| assign_from_blip(b, direction)).collect();

    let n = T::from_count(data.n_units());
    let tiny = sample_sd(&pseudo.d) * T::lit(1e-3);
    let near_zero = blip.predictions.iter().filter(|b| b.abs() < tiny).count();
    let diagnostics = StageDiagnostics {
        fraction_treated: (T::from_count(assignments.iter().filter(|&&d| d == 1).count()) / n).as_f64(),
        mean_blip: mean(&blip.predictions).as_f64(),
        near_zero_blip_fraction: (T::from_count(near_zero) / n).as_f64(),
        clipped_propensities: nuisances.clipped,
        capped_weights,
        outcome_learner: nuisances.outcome_learner,
        propensity_learner: nuisances.propensity_learner,
        blip_learner: blip.selected,
        blip_nonzero_slopes: blip.model.nonzero_slopes(),
    };
    Ok(StageFit {
        stage: FittedODTRStage {
            t,
            rule_covariates: v_names.to_vec(),
            direction,
            blip: blip.model,
            cross_fit: blip.cross_fit,
            diagnostics,
        },
        nuisances,
        pseudo,
        assignments,
    })
}

/// Learns the rule at decision point `t` targeting the observed outcome.
pub fn learn_odtr_single<T: Real>(
    data: &LongitudinalDataset<T>,
    t: usize,
    vspec: &RuleCovariateSpec,
    cfg: &LearnerConfig,
    direction: Direction,
    plan: &CrossFitPlan,
) -> Result<FittedODTRStage<T>> {
    Ok(fit_single(data, t, vspec, cfg, direction, plan)?.stage)
}

pub(crate) fn fit_single<T: Real>(
    data: &LongitudinalDataset<T>,
    t: usize,
    vspec: &RuleCovariateSpec,
    cfg: &LearnerConfig,
    direction: Direction,
    plan: &CrossFitPlan,
) -> Result<StageFit<T>> {
    cfg.validate()?;
    vspec.validate(data)?;
    let y = data.outcome();
    let a = data.treatment(t);
    fit_stage(data, t, y, vspec.columns_at(t), cfg, direction, plan, |nuis| {
        Ok((aipw_transform(y, nuis, a)?, 0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateBlock;
    use crate::rng::seeded;
    use rand::Rng;

    fn nuis(q1: Vec<f64>, q0: Vec<f64>, a: &[u8], g: Vec<f64>) -> NuisanceEstimates<f64> {
        let qa = a
            .iter()
            .enumerate()
            .map(|(i, &ai)| if ai == 1 { q1[i] } else { q0[i] })
            .collect();
        NuisanceEstimates {
            q1,
            q0,
            qa,
            g,
            clipped: 0,
            outcome_learner: 0,
            propensity_learner: 0,
        }
    }

    #[test]
    fn aipw_hand_values() {
        let a = [1u8, 0];
        let n = nuis(vec![1.0, 1.0], vec![0.5, 0.5], &a, vec![0.5, 0.5]);
        let d = aipw_transform(&[1.5, 0.0], &n, &a).unwrap();
        assert_eq!(d.d, vec![1.5, 1.5]);
    }

    #[test]
    fn zero_residual_gives_plug_in_contrast() {
        let a = [1u8, 0, 1];
        let n = nuis(vec![2.0, -1.0, 0.3], vec![0.5, 4.0, 0.1], &a, vec![0.2, 0.7, 0.9]);
        let y = n.qa.clone();
        let d = aipw_transform(&y, &n, &a).unwrap();
        for i in 0..3 {
            assert_eq!(d.d[i], n.q1[i] - n.q0[i]);
        }
    }

    #[test]
    fn clipping_rule() {
        let (g, clipped) = propensity_of_observed(&[0.001, 0.5, 0.999, 0.999], &[1, 1, 1, 0], 0.01);
        assert_eq!(g, vec![0.01, 0.5, 0.99, 0.01]);
        assert_eq!(clipped, 3);
    }

    fn randomized(n: usize, seed: u64, cate: impl Fn(f64) -> f64, noise: f64) -> LongitudinalDataset<f64> {
        let mut rng = seeded(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.5) as u8).collect();
        let y = (0..n)
            .map(|i| 0.5 * w[i] + a[i] as f64 * cate(w[i]) + noise * rng.gen_range(-1.0..1.0))
            .collect();
        LongitudinalDataset::new(
            vec![CovariateBlock {
                names: vec!["W1".into()],
                columns: vec![w],
            }],
            vec!["A1".into()],
            vec![a],
            "Y".into(),
            y,
        )
        .unwrap()
    }

    fn linear_cfg() -> LearnerConfig {
        LearnerConfig {
            outcome: SuperLearnerSpec::single(LearnerSpec::PenalizedLinear {
                lambda: 0.0,
                penalty: crate::learners::Penalty::Lasso,
                interactions: true,
            }),
            propensity: SuperLearnerSpec::single(LearnerSpec::Intercept),
            blip: SuperLearnerSpec::single(LearnerSpec::lasso(0.0)),
            folds: Some(5),
            ..Default::default()
        }
    }

    #[test]
    fn exact_outcome_model_reproduces_y() {
        let data = randomized(200, 1, |w| w, 0.0);
        let cfg = linear_cfg();
        let plan = cfg.plan(200, 3, 1).unwrap();
        let n = estimate_nuisances(&data, 1, data.outcome(), &cfg, &plan).unwrap();
        for (qa, y) in n.qa.iter().zip(data.outcome()) {
            assert!((qa - y).abs() < 1e-6, "{qa} vs {y}");
        }
        for g in &n.g {
            assert!((g - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn empty_v_gives_mean_blip() {
        let data = randomized(100, 2, |_| 1.0, 0.3);
        let plan = CrossFitPlan::new(100, 4, 0).unwrap();
        let d = PseudoOutcomeVector {
            d: data.outcome().to_vec(),
        };
        let v = FeatureMatrix::empty(100);
        let fit = fit_blip(&d, &v, &SuperLearnerSpec::single(LearnerSpec::lasso(0.1)), &plan, false).unwrap();
        let m = mean(data.outcome());
        assert!(fit.predictions.iter().all(|p| (p - m).abs() < 1e-12));
        let constant = PseudoOutcomeVector { d: vec![0.7; 100] };
        let v = history_at(&data, 1).unwrap().features(&data);
        let fit = fit_blip(&constant, &v, &SuperLearnerSpec::single(LearnerSpec::lasso(0.0)), &plan, true).unwrap();
        assert!(fit.predictions.iter().all(|p| (p - 0.7).abs() < 1e-9));
    }

    #[test]
    fn learns_sign_of_linear_cate() {
        let n = 5000;
        let data = randomized(n, 3, |w| w, 1.0);
        let cfg = LearnerConfig::default();
        let plan = cfg.plan(n, 11, 1).unwrap();
        let vspec = RuleCovariateSpec::full_history(&data);
        let stage = learn_odtr_single(&data, 1, &vspec, &cfg, Direction::Maximize, &plan).unwrap();
        let grid = FeatureMatrix::new(
            vec!["W1".into()],
            vec![(0..1000).map(|i| -1.0 + (i as f64 + 0.5) / 500.0).collect()],
            1000,
        )
        .unwrap();
        let blip = stage.blip.predict(&grid).unwrap();
        let agree = grid
            .column(0)
            .iter()
            .zip(&blip)
            .filter(|(w, b)| (**w > 0.0) == (**b > 0.0))
            .count();
        assert!(agree >= 950, "agreement {agree}/1000");
    }

    #[test]
    fn constant_cate_sign_and_direction() {
        let data = randomized(400, 4, |_| 1.0, 0.2);
        let cfg = linear_cfg();
        let plan = cfg.plan(400, 1, 1).unwrap();
        let vspec = RuleCovariateSpec::full_history(&data);
        let max = learn_odtr_single(&data, 1, &vspec, &cfg, Direction::Maximize, &plan).unwrap();
        assert_eq!(max.assign(&data).unwrap(), vec![1; 400]);
        let min = learn_odtr_single(&data, 1, &vspec, &cfg, Direction::Minimize, &plan).unwrap();
        assert_eq!(min.assign(&data).unwrap(), vec![0; 400]);
        assert_eq!(min.diagnostics.fraction_treated, 0.0);
    }

    #[test]
    fn single_arm_fold_is_reported() {
        let mut data = randomized(40, 5, |_| 1.0, 0.2);
        data = LongitudinalDataset::new(
            vec![data.covariates(1).clone()],
            vec!["A1".into()],
            vec![vec![1; 40]],
            "Y".into(),
            data.outcome().to_vec(),
        )
        .unwrap();
        let cfg = linear_cfg();
        let plan = cfg.plan(40, 1, 1).unwrap();
        let err = estimate_nuisances(&data, 1, data.outcome(), &cfg, &plan).unwrap_err();
        assert!(matches!(err, Error::SingleArm { arm: 1, .. }), "{err}");
    }
}
