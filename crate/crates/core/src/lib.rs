//! Doubly-robust learning of optimal dynamic treatment rules from longitudinal
//! data, and sequentially doubly-robust evaluation of arbitrary rules.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod config;
pub mod data;
pub mod error;
pub mod learners;
mod linalg;
pub mod longitudinal;
pub mod matrix;
pub mod policy;
pub mod rng;
pub mod rule;
pub mod scalar;
pub mod sim;
pub mod single;

pub use config::LearnerConfig;
pub use data::{history_at, load_csv, read_csv, Direction, HistoryView, RuleCovariateSpec, Schema};
pub use error::{Error, Result};
pub use learners::{
    cross_fit_predict, cv_risk, discrete_super_learner, fit, predict, CrossFitPlan, Family, LearnerSpec,
    SuperLearnerSpec,
};
pub use longitudinal::{learn_odtr, learn_odtr_with_plans, pseudo_outcome_update, sequential_aipw_transform};
pub use policy::{difference_contrast, rr_contrast, sdr_policy_value};
pub use rule::{apply_rule, apply_rule_all};
pub use scalar::Real;
pub use single::{aipw_transform, estimate_nuisances, fit_blip, learn_odtr_single};

pub type LongitudinalDataset = data::LongitudinalDataset<f64>;
pub type FeatureMatrix = matrix::FeatureMatrix<f64>;
pub type FittedModel = learners::FittedModel<f64>;
pub type TreatmentRule = rule::TreatmentRule<f64>;
pub type NuisanceEstimates = single::NuisanceEstimates<f64>;
pub type FittedODTRStage = single::FittedODTRStage<f64>;
pub type FittedODTR = longitudinal::FittedODTR<f64>;
pub type PolicyValueEstimate = policy::PolicyValueEstimate<f64>;
pub type ContrastEstimate = policy::ContrastEstimate<f64>;
