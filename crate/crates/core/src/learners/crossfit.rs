use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{fit, loss, Family, FittedModel, LearnerSpec, SuperLearnerSpec};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::rng::{derive_seed, seeded};
use crate::scalar::Real;

/// Assignment of units to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossFitPlan {
    k: usize,
    folds: Vec<usize>,
    seed: u64,
}

impl CrossFitPlan {
    /// Folds from a seeded permutation: unit at permuted position `r` goes to fold `r mod k`.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > n {
            return Err(Error::InvalidPlan(format!("need 2 <= k <= n, got k={k}, n={n}")));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeded(seed));
        let mut folds = vec![0; n];
        for (pos, &unit) in perm.iter().enumerate() {
            folds[unit] = pos % k;
        }
        Ok(Self { k, folds, seed })
    }

    /// Plan with fresh folds for one stage or replicate (`stream`) of a run.
    pub fn for_stream(n: usize, k: usize, master_seed: u64, stream: u64) -> Result<Self> {
        Self::new(n, k, derive_seed(master_seed, stream))
    }

    pub fn from_assignment(folds: Vec<usize>) -> Result<Self> {
        let k = folds.iter().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::InvalidPlan("need at least two folds".into()));
        }
        let mut sizes = vec![0usize; k];
        for &f in &folds {
            sizes[f] += 1;
        }
        let (lo, hi) = (sizes.iter().min().copied().unwrap_or(0), sizes.iter().max().copied().unwrap_or(0));
        if lo == 0 || hi - lo > 1 {
            return Err(Error::InvalidPlan(format!("fold sizes {sizes:?} must be non-empty and differ by at most 1")));
        }
        Ok(Self { k, folds, seed: 0 })
    }

    /// `min(10, n / 20)`, clamped to `[2, n]`.
    pub fn default_folds(n: usize) -> usize {
        (n / 20).min(10).max(2).min(n)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.folds.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.folds[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.folds
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.folds[i] != fold).collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.n() {
            return Err(Error::InvalidPlan(format!("plan covers {} rows, data has {n}", self.n())));
        }
        Ok(())
    }
}

/// Fails if any training split lacks one of the two treatment arms.
pub fn check_both_arms(a: &[u8], plan: &CrossFitPlan) -> Result<()> {
    plan.check_len(a.len())?;
    for fold in 0..plan.k() {
        let train = plan.train_rows(fold);
        let ones = train.iter().filter(|&&i| a[i] == 1).count();
        if ones == 0 || ones == train.len() {
            return Err(Error::SingleArm {
                fold,
                arm: if ones == 0 { 0 } else { 1 },
                size: train.len(),
            });
        }
    }
    Ok(())
}

fn pick<T: Real>(y: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| y[i]).collect()
}

fn fit_fold<T: Real>(
    spec: &LearnerSpec,
    x: &FeatureMatrix<T>,
    y: &[T],
    family: Family,
    plan: &CrossFitPlan,
    fold: usize,
) -> Result<(FittedModel<T>, Vec<usize>, Vec<T>)> {
    let train = plan.train_rows(fold);
    if train.len() < spec.min_rows() {
        return Err(Error::InvalidPlan(format!(
            "fold {fold} leaves {} training rows, {spec:?} needs {}",
            train.len(),
            spec.min_rows()
        )));
    }
    let model = fit(spec, &x.select_rows(&train), &pick(y, &train), family)?;
    let test = plan.test_rows(fold);
    let preds = model.predict(&x.select_rows(&test))?;
    Ok((model, test, preds))
}

/// Out-of-fold predictions of `spec` plus the per-fold models.
fn out_of_fold<T: Real>(
    spec: &LearnerSpec,
    x: &FeatureMatrix<T>,
    y: &[T],
    family: Family,
    plan: &CrossFitPlan,
) -> Result<(Vec<T>, Vec<FittedModel<T>>)> {
    plan.check_len(y.len())?;
    // Fold results are collected by index, so output is independent of scheduling.
    let per_fold = (0..plan.k())
        .into_par_iter()
        .map(|fold| fit_fold(spec, x, y, family, plan, fold))
        .collect::<Result<Vec<_>>>()?;
    let mut preds = vec![T::zero(); y.len()];
    let mut models = Vec::with_capacity(plan.k());
    for (model, test, p) in per_fold {
        for (i, v) in test.into_iter().zip(p) {
            preds[i] = v;
        }
        models.push(model);
    }
    Ok((preds, models))
}

fn mean_loss<T: Real>(family: Family, y: &[T], preds: &[T]) -> T {
    let total: T = y.iter().zip(preds).map(|(&a, &b)| loss(family, a, b)).sum();
    total / T::from_count(y.len())
}

/// Mean held-out loss of `spec` over the folds of `plan`.
pub fn cv_risk<T: Real>(
    spec: &LearnerSpec,
    x: &FeatureMatrix<T>,
    y: &[T],
    family: Family,
    plan: &CrossFitPlan,
) -> Result<T> {
    let (preds, _) = out_of_fold(spec, x, y, family, plan)?;
    Ok(mean_loss(family, y, &preds))
}

#[derive(Debug, Clone)]
pub struct SuperLearnerFit<T> {
    pub model: FittedModel<T>,
    pub selected: usize,
    pub risks: Vec<T>,
}

fn argmin_first<T: Real>(risks: &[T]) -> usize {
    let mut best = 0;
    for (i, &r) in risks.iter().enumerate().skip(1) {
        // strict: ties keep the earlier library member; NaN never wins
        if r < risks[best] || (risks[best].is_nan() && !r.is_nan()) {
            best = i;
        }
    }
    best
}

/// Winner-take-all super learner: the library member with the smallest
/// cross-validated risk, refit on all rows.
pub fn discrete_super_learner<T: Real>(
    sl: &SuperLearnerSpec,
    x: &FeatureMatrix<T>,
    y: &[T],
    family: Family,
    plan: &CrossFitPlan,
) -> Result<SuperLearnerFit<T>> {
    sl.validate(family)?;
    let risks = sl
        .library
        .iter()
        .map(|spec| cv_risk(spec, x, y, family, plan))
        .collect::<Result<Vec<_>>>()?;
    let selected = argmin_first(&risks);
    let model = fit(&sl.library[selected], x, y, family)?;
    Ok(SuperLearnerFit { model, selected, risks })
}

/// Cross-fitted nuisance fit: each unit's prediction comes from a model that
/// never saw the unit's fold.
#[derive(Debug, Clone)]
pub struct CrossFit<T> {
    pub predictions: Vec<T>,
    /// Model trained without fold `k`, for each `k`.
    pub models: Vec<FittedModel<T>>,
    pub selected: usize,
    pub risks: Vec<T>,
}

impl<T: Real> CrossFit<T> {
    /// Predicts each row of `x` with the model that excluded that row's fold.
    pub fn predict_held_out(&self, plan: &CrossFitPlan, x: &FeatureMatrix<T>) -> Result<Vec<T>> {
        plan.check_len(x.n_rows())?;
        let x = x.aligned_to(&self.models[0].feature_names)?;
        let mut row = Vec::with_capacity(x.n_cols());
        Ok((0..x.n_rows())
            .map(|i| {
                x.row_into(i, &mut row);
                self.models[plan.fold_of(i)].predict_row(&row)
            })
            .collect())
    }
}

/// Cross-fits the discrete super learner. Every library member is fit once per
/// fold; the member with the lowest pooled out-of-fold risk is selected (ties by
/// library order) and its out-of-fold predictions and fold models are returned.
pub fn cross_fit<T: Real>(
    sl: &SuperLearnerSpec,
    x: &FeatureMatrix<T>,
    y: &[T],
    family: Family,
    plan: &CrossFitPlan,
) -> Result<CrossFit<T>> {
    sl.validate(family)?;
    let mut fits = sl
        .library
        .iter()
        .map(|spec| out_of_fold(spec, x, y, family, plan))
        .collect::<Result<Vec<_>>>()?;
    let risks: Vec<T> = fits.iter().map(|(p, _)| mean_loss(family, y, p)).collect();
    let selected = argmin_first(&risks);
    let (predictions, models) = fits.swap_remove(selected);
    Ok(CrossFit {
        predictions,
        models,
        selected,
        risks,
    })
}

pub fn cross_fit_predict<T: Real>(
    sl: &SuperLearnerSpec,
    x: &FeatureMatrix<T>,
    y: &[T],
    family: Family,
    plan: &CrossFitPlan,
) -> Result<Vec<T>> {
    Ok(cross_fit(sl, x, y, family, plan)?.predictions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept() -> SuperLearnerSpec {
        SuperLearnerSpec::single(LearnerSpec::Intercept)
    }

    #[test]
    fn plan_fold_sizes_balanced() {
        for (n, k) in [(10, 3), (7, 7), (100, 10), (23, 4)] {
            let plan = CrossFitPlan::new(n, k, 5).unwrap();
            let sizes: Vec<usize> = (0..k).map(|f| plan.test_rows(f).len()).collect();
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert!(CrossFitPlan::new(3, 1, 0).is_err());
        assert!(CrossFitPlan::new(3, 4, 0).is_err());
    }

    #[test]
    fn default_fold_count() {
        assert_eq!(CrossFitPlan::default_folds(500), 10);
        assert_eq!(CrossFitPlan::default_folds(100), 5);
        assert_eq!(CrossFitPlan::default_folds(30), 2);
        assert_eq!(CrossFitPlan::default_folds(10_000), 10);
    }

    #[test]
    fn cv_risk_constant_y_is_zero() {
        let plan = CrossFitPlan::new(6, 3, 1).unwrap();
        let r = cv_risk(&LearnerSpec::Intercept, &FeatureMatrix::empty(6), &[4.0; 6], Family::Squared, &plan).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn cv_risk_leave_one_out_pair() {
        let plan = CrossFitPlan::from_assignment(vec![0, 1]).unwrap();
        let r = cv_risk(&LearnerSpec::Intercept, &FeatureMatrix::empty(2), &[0.0, 2.0], Family::Squared, &plan).unwrap();
        assert_eq!(r, 4.0);
    }

    #[test]
    fn cross_fit_two_folds_hand_values() {
        let plan = CrossFitPlan::from_assignment(vec![0, 0, 1, 1]).unwrap();
        let p = cross_fit_predict(&intercept(), &FeatureMatrix::empty(4), &[0.0, 0.0, 2.0, 2.0], Family::Squared, &plan)
            .unwrap();
        assert_eq!(p, vec![2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_fit_leave_one_out_hand_values() {
        let plan = CrossFitPlan::from_assignment(vec![0, 1, 2]).unwrap();
        let p = cross_fit_predict(&intercept(), &FeatureMatrix::empty(3), &[1.0, 2.0, 3.0], Family::Squared, &plan)
            .unwrap();
        assert_eq!(p, vec![2.5, 2.0, 1.5]);
    }

    #[test]
    fn super_learner_ties_pick_first() {
        let sl = SuperLearnerSpec::new(vec![LearnerSpec::lasso(0.1), LearnerSpec::lasso(0.1)]);
        let x = FeatureMatrix::new(vec!["a".into()], vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], 6).unwrap();
        let y = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        let plan = CrossFitPlan::new(6, 3, 2).unwrap();
        let fit = discrete_super_learner(&sl, &x, &y, Family::Squared, &plan).unwrap();
        assert_eq!(fit.selected, 0);
        assert_eq!(fit.risks[0], fit.risks[1]);
    }

    #[test]
    fn singleton_library_selects_its_member() {
        let plan = CrossFitPlan::new(5, 2, 2).unwrap();
        let fit = discrete_super_learner(&intercept(), &FeatureMatrix::empty(5), &[1.0, 2.0, 3.0, 4.0, 5.0], Family::Squared, &plan)
            .unwrap();
        assert_eq!(fit.selected, 0);
        assert_eq!(fit.model.predict(&FeatureMatrix::empty(1)).unwrap(), vec![3.0]);
    }

    #[test]
    fn single_arm_fold_detected() {
        let plan = CrossFitPlan::from_assignment(vec![0, 0, 1, 1]).unwrap();
        let err = check_both_arms(&[1, 1, 0, 0], &plan).unwrap_err();
        assert!(matches!(err, Error::SingleArm { fold: 0, arm: 0, size: 2 }));
        check_both_arms(&[1, 0, 0, 1], &plan).unwrap();
    }

    #[test]
    fn too_small_training_split_is_an_error() {
        let plan = CrossFitPlan::from_assignment(vec![0, 1]).unwrap();
        let x = FeatureMatrix::new(vec!["a".into()], vec![vec![0.0, 1.0]], 2).unwrap();
        assert!(matches!(
            cv_risk(&LearnerSpec::lasso(0.0), &x, &[0.0, 1.0], Family::Squared, &plan),
            Err(Error::InvalidPlan(_))
        ));
    }
}
