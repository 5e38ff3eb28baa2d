//! Regression and classification learners, cross-validated risk, and the
//! discrete (winner-take-all) super learner.

mod crossfit;
pub mod gbt;
pub mod linear;
pub mod logistic;

use serde::{Deserialize, Serialize};

pub use crossfit::{
    check_both_arms, cross_fit, cross_fit_predict, cv_risk, discrete_super_learner, CrossFit,
    CrossFitPlan, SuperLearnerFit,
};
pub use gbt::TreeEnsemble;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::{expit, Real};

/// Loss family of a regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    #[serde(alias = "gaussian")]
    Squared,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    Ridge,
    Lasso,
}

/// A learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Mean-only model.
    Intercept,
    /// Squared-loss linear regression with a ridge or lasso penalty on
    /// standardized slopes. `interactions` adds all pairwise products.
    PenalizedLinear {
        lambda: f64,
        penalty: Penalty,
        #[serde(default)]
        interactions: bool,
    },
    /// Ridge-penalized logistic regression on standardized features.
    Logistic {
        lambda: f64,
        #[serde(default)]
        interactions: bool,
    },
    GradientBoostedTrees {
        num_trees: usize,
        max_depth: usize,
        learning_rate: f64,
        min_leaf_size: usize,
    },
}

impl LearnerSpec {
    pub fn lasso(lambda: f64) -> Self {
        LearnerSpec::PenalizedLinear {
            lambda,
            penalty: Penalty::Lasso,
            interactions: false,
        }
    }

    pub fn logistic(lambda: f64) -> Self {
        LearnerSpec::Logistic {
            lambda,
            interactions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("{msg}: {self:?}")));
        match *self {
            LearnerSpec::Intercept => Ok(()),
            LearnerSpec::PenalizedLinear { lambda, .. } | LearnerSpec::Logistic { lambda, .. } => {
                if !lambda.is_finite() || lambda < 0.0 {
                    return bad("lambda must be finite and non-negative");
                }
                Ok(())
            }
            LearnerSpec::GradientBoostedTrees {
                learning_rate,
                min_leaf_size,
                ..
            } => {
                if !(learning_rate.is_finite() && learning_rate > 0.0 && learning_rate <= 1.0) {
                    return bad("learning_rate must lie in (0, 1]");
                }
                if min_leaf_size == 0 {
                    return bad("min_leaf_size must be positive");
                }
                Ok(())
            }
        }
    }

    pub fn supports(&self, family: Family) -> bool {
        match self {
            LearnerSpec::Intercept | LearnerSpec::GradientBoostedTrees { .. } => true,
            LearnerSpec::PenalizedLinear { .. } => family == Family::Squared,
            LearnerSpec::Logistic { .. } => family == Family::Binomial,
        }
    }

    /// Fewest training rows the learner accepts.
    pub fn min_rows(&self) -> usize {
        match self {
            LearnerSpec::Intercept => 1,
            _ => 2,
        }
    }
}

/// Library for the discrete super learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuperLearnerSpec {
    pub library: Vec<LearnerSpec>,
}

impl SuperLearnerSpec {
    pub fn new(library: Vec<LearnerSpec>) -> Self {
        Self { library }
    }

    pub fn single(spec: LearnerSpec) -> Self {
        Self {
            library: vec![spec],
        }
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        if self.library.is_empty() {
            return Err(Error::InvalidSpec("super learner library is empty".into()));
        }
        for spec in &self.library {
            spec.validate()?;
            if !spec.supports(family) {
                return Err(Error::InvalidSpec(format!("{spec:?} does not support the {family:?} family")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum ModelKind<T> {
    Constant { value: T },
    /// Identity link on the original feature scale.
    Linear {
        intercept: T,
        coefficients: Vec<T>,
        interactions: bool,
    },
    /// Logit link on the original feature scale.
    Logistic {
        intercept: T,
        coefficients: Vec<T>,
        interactions: bool,
    },
    Boosted(TreeEnsemble<T>),
}

/// Immutable fitted learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FittedModel<T> {
    pub family: Family,
    pub feature_names: Vec<String>,
    pub model: ModelKind<T>,
}

pub(crate) fn prob_eps<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(4.0))
}

fn clip_prob<T: Real>(p: T) -> T {
    let eps = prob_eps::<T>();
    p.max(eps).min(T::one() - eps)
}

/// Appends all pairwise products `x_i * x_j` (`i < j`).
pub(crate) fn with_interactions<T: Real>(x: &FeatureMatrix<T>) -> FeatureMatrix<T> {
    let mut out = x.clone();
    let p = x.n_cols();
    for i in 0..p {
        for j in i + 1..p {
            let col = x.column(i).iter().zip(x.column(j)).map(|(&a, &b)| a * b).collect();
            out.push_column(format!("{}*{}", x.names()[i], x.names()[j]), col)
                .expect("same row count");
        }
    }
    out
}

fn linear_predictor<T: Real>(intercept: T, coefs: &[T], row: &[T], interactions: bool) -> T {
    let p = row.len();
    let mut eta = intercept;
    for (c, x) in coefs.iter().zip(row) {
        eta += *c * *x;
    }
    if interactions {
        let mut k = p;
        for i in 0..p {
            for j in i + 1..p {
                eta += coefs[k] * row[i] * row[j];
                k += 1;
            }
        }
    }
    eta
}

/// Fits `spec` to `(x, y)` under the given loss family.
pub fn fit<T: Real>(spec: &LearnerSpec, x: &FeatureMatrix<T>, y: &[T], family: Family) -> Result<FittedModel<T>> {
    spec.validate()?;
    if !spec.supports(family) {
        return Err(Error::InvalidSpec(format!("{spec:?} does not support the {family:?} family")));
    }
    if x.n_rows() != y.len() {
        return Err(Error::Dimension(format!("{} feature rows for {} targets", x.n_rows(), y.len())));
    }
    if y.len() < spec.min_rows() {
        return Err(Error::InvalidSpec(format!("{} rows is too few to fit {spec:?}", y.len())));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("feature matrix"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression target"));
    }
    if family == Family::Binomial && y.iter().any(|&v| v < T::zero() || v > T::one()) {
        return Err(Error::InvalidSpec("binomial targets must lie in [0, 1]".into()));
    }
    let model = match *spec {
        LearnerSpec::Intercept => {
            let m = crate::scalar::mean(y);
            ModelKind::Constant {
                value: if family == Family::Binomial { clip_prob(m) } else { m },
            }
        }
        LearnerSpec::PenalizedLinear {
            lambda,
            penalty,
            interactions,
        } => {
            let design = if interactions { with_interactions(x) } else { x.clone() };
            let (intercept, coefficients) = linear::fit_penalized(&design, y, T::lit(lambda), penalty);
            ModelKind::Linear {
                intercept,
                coefficients,
                interactions,
            }
        }
        LearnerSpec::Logistic { lambda, interactions } => {
            let design = if interactions { with_interactions(x) } else { x.clone() };
            let (intercept, coefficients) = logistic::fit_logistic(&design, y, T::lit(lambda));
            ModelKind::Logistic {
                intercept,
                coefficients,
                interactions,
            }
        }
        LearnerSpec::GradientBoostedTrees {
            num_trees,
            max_depth,
            learning_rate,
            min_leaf_size,
        } => ModelKind::Boosted(gbt::fit_boosted(
            x,
            y,
            family,
            &gbt::BoostParams {
                num_trees,
                max_depth,
                learning_rate: T::lit(learning_rate),
                min_leaf_size,
            },
        )),
    };
    Ok(FittedModel {
        family,
        feature_names: x.names().to_vec(),
        model,
    })
}

impl<T: Real> FittedModel<T> {
    /// Prediction for one row laid out in `feature_names` order.
    pub fn predict_row(&self, row: &[T]) -> T {
        let out = match &self.model {
            ModelKind::Constant { value } => *value,
            ModelKind::Linear {
                intercept,
                coefficients,
                interactions,
            } => linear_predictor(*intercept, coefficients, row, *interactions),
            ModelKind::Logistic {
                intercept,
                coefficients,
                interactions,
            } => expit(linear_predictor(*intercept, coefficients, row, *interactions)),
            ModelKind::Boosted(ens) => ens.predict_row(row, self.family),
        };
        match self.family {
            Family::Binomial => clip_prob(out),
            Family::Squared => out,
        }
    }

    pub fn predict(&self, x: &FeatureMatrix<T>) -> Result<Vec<T>> {
        let x = x.aligned_to(&self.feature_names)?;
        let mut row = Vec::with_capacity(x.n_cols());
        Ok((0..x.n_rows())
            .map(|i| {
                x.row_into(i, &mut row);
                self.predict_row(&row)
            })
            .collect())
    }

    /// Number of non-zero slope coefficients, when the model is linear.
    pub fn nonzero_slopes(&self) -> Option<usize> {
        match &self.model {
            ModelKind::Linear { coefficients, .. } | ModelKind::Logistic { coefficients, .. } => {
                Some(coefficients.iter().filter(|c| !c.is_zero()).count())
            }
            ModelKind::Constant { .. } => Some(0),
            ModelKind::Boosted(_) => None,
        }
    }
}

/// Per-row loss used for cross-validated risk.
pub fn loss<T: Real>(family: Family, y: T, pred: T) -> T {
    match family {
        Family::Squared => (y - pred) * (y - pred),
        Family::Binomial => {
            let p = clip_prob(pred);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        }
    }
}

pub fn predict<T: Real>(model: &FittedModel<T>, x: &FeatureMatrix<T>) -> Result<Vec<T>> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: Vec<(&str, Vec<f64>)>) -> FeatureMatrix<f64> {
        let n = cols[0].1.len();
        let (names, columns): (Vec<_>, Vec<_>) = cols.into_iter().map(|(n, c)| (n.to_string(), c)).unzip();
        FeatureMatrix::new(names, columns, n).unwrap()
    }

    #[test]
    fn intercept_predicts_mean() {
        let x = FeatureMatrix::empty(3);
        let m = fit(&LearnerSpec::Intercept, &x, &[1.0, 2.0, 3.0], Family::Squared).unwrap();
        assert_eq!(m.predict(&FeatureMatrix::empty(4)).unwrap(), vec![2.0; 4]);
    }

    #[test]
    fn lasso_with_huge_penalty_is_intercept_only() {
        let x = matrix(vec![("a", vec![1.0, -2.0, 0.5, 3.0, -1.0]), ("b", vec![0.0, 1.0, 1.0, 0.0, 2.0])]);
        let y = [1.0, 2.0, 0.0, 4.0, 3.0];
        let m = fit(&LearnerSpec::lasso(1e6), &x, &y, Family::Squared).unwrap();
        match &m.model {
            ModelKind::Linear { intercept, coefficients, .. } => {
                assert!(coefficients.iter().all(|&c| c == 0.0));
                assert!((intercept - 2.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn logistic_no_signal_predicts_half() {
        let x = matrix(vec![("z", vec![0.0; 6])]);
        let y = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let m = fit(&LearnerSpec::logistic(0.0), &x, &y, Family::Binomial).unwrap();
        for p in m.predict(&x).unwrap() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_ensemble_is_base_score() {
        let x = matrix(vec![("a", vec![1.0, 2.0, 3.0, 4.0])]);
        let spec = LearnerSpec::GradientBoostedTrees {
            num_trees: 0,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf_size: 1,
        };
        let m = fit(&spec, &x, &[1.0, 2.0, 3.0, 6.0], Family::Squared).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![3.0; 4]);
        let m = fit(&spec, &x, &[1.0, 0.0, 0.0, 0.0], Family::Binomial).unwrap();
        for p in m.predict(&x).unwrap() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_aligns_by_name_and_rejects_missing() {
        let x = matrix(vec![("a", vec![1.0, 2.0, 3.0]), ("b", vec![0.0, 1.0, 0.0])]);
        let y = [1.0, 2.0, 3.0];
        let m = fit(&LearnerSpec::lasso(0.0), &x, &y, Family::Squared).unwrap();
        let swapped = matrix(vec![("b", vec![0.0, 1.0, 0.0]), ("a", vec![1.0, 2.0, 3.0])]);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&swapped).unwrap());
        let missing = matrix(vec![("a", vec![1.0])]);
        assert!(matches!(m.predict(&missing), Err(Error::ColumnMismatch { .. })));
    }

    #[test]
    fn family_mismatch_and_bad_inputs_rejected() {
        let x = matrix(vec![("a", vec![1.0, 2.0])]);
        assert!(fit(&LearnerSpec::logistic(0.0), &x, &[0.0, 1.0], Family::Squared).is_err());
        assert!(fit(&LearnerSpec::lasso(0.1), &x, &[0.0, 1.0], Family::Binomial).is_err());
        assert!(matches!(
            fit(&LearnerSpec::lasso(0.1), &x, &[0.0, f64::NAN], Family::Squared),
            Err(Error::NonFinite(_))
        ));
        assert!(LearnerSpec::GradientBoostedTrees {
            num_trees: 1,
            max_depth: 1,
            learning_rate: 1.5,
            min_leaf_size: 1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn degenerate_logistic_still_returns() {
        let x = matrix(vec![("a", vec![1.0, 2.0, 3.0, 4.0])]);
        let m = fit(&LearnerSpec::logistic(0.0), &x, &[1.0; 4], Family::Binomial).unwrap();
        for p in m.predict(&x).unwrap() {
            assert!(p > 0.99 && p < 1.0);
        }
    }

    #[test]
    fn interactions_recover_product_term() {
        let a: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let w: Vec<f64> = (0..40).map(|i| (i as f64) / 10.0 - 2.0).collect();
        let y: Vec<f64> = a.iter().zip(&w).map(|(a, w)| 1.0 + 2.0 * a * w - w).collect();
        let x = matrix(vec![("a", a), ("w", w)]);
        let spec = LearnerSpec::PenalizedLinear {
            lambda: 0.0,
            penalty: Penalty::Ridge,
            interactions: true,
        };
        let m = fit(&spec, &x, &y, Family::Squared).unwrap();
        for (p, t) in m.predict(&x).unwrap().iter().zip(&y) {
            assert!((p - t).abs() < 1e-9);
        }
    }

    #[test]
    fn fitted_model_serde_round_trip() {
        let x = matrix(vec![("a", vec![1.0, 2.0, 3.0, 5.0])]);
        let m = fit(&LearnerSpec::lasso(0.01), &x, &[1.0, 2.0, 2.5, 4.0], Family::Squared).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: FittedModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn learner_spec_json_shape() {
        let v: LearnerSpec = serde_json::from_value(serde_json::json!(
            {"learner": "penalized_linear", "lambda": 0.01, "penalty": "lasso"}
        ))
        .unwrap();
        assert_eq!(v, LearnerSpec::lasso(0.01));
    }
}
