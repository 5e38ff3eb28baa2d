//! Treatment rules: per-time maps from a unit's history to a binary treatment.

use serde::{Deserialize, Serialize};

use crate::data::{history_at, rule_features, Direction, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::learners::FittedModel;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparison {
    pub fn holds<T: Real>(self, lhs: T, rhs: T) -> bool {
        match self {
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Eq => lhs == rhs,
            Comparison::Ne => lhs != rhs,
        }
    }
}

/// Treatment implied by a blip value: `I(B > 0)` when maximizing, `I(B < 0)`
/// when minimizing. A zero blip assigns 0 either way.
pub fn assign_from_blip<T: Real>(blip: T, direction: Direction) -> u8 {
    let treat = match direction {
        Direction::Maximize => blip > T::zero(),
        Direction::Minimize => blip < T::zero(),
    };
    treat as u8
}

/// Blip models fit on all rows, one per time-point, each reading only `V_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BlipRule<T> {
    pub direction: Direction,
    pub stages: Vec<FittedModel<T>>,
}

/// Per-stage fold assignment and the blip model trained without each fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CrossFitBlipStage<T> {
    pub folds: Vec<usize>,
    pub models: Vec<FittedModel<T>>,
}

/// In-sample rule where unit `i` is assigned by blip models that excluded its fold.
/// Only evaluable on the dataset it was learned from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CrossFitBlipRule<T> {
    pub direction: Direction,
    pub stages: Vec<CrossFitBlipStage<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", bound = "T: Real")]
pub enum TreatmentRule<T> {
    StaticAll {
        value: u8,
    },
    Threshold {
        column: String,
        op: Comparison,
        cutoff: T,
        if_true: u8,
        if_false: u8,
    },
    LearnedBlip(BlipRule<T>),
    CrossFitBlip(CrossFitBlipRule<T>),
    /// `d_t(.) = A_t` as observed.
    ObservedTreatment,
    /// A different rule at each time-point.
    PerTime {
        rules: Vec<TreatmentRule<T>>,
    },
}

fn binary(v: u8) -> Result<u8> {
    if v > 1 {
        return Err(Error::Rule(format!("assignment {v} is not binary")));
    }
    Ok(v)
}

fn blip_predictions<T: Real>(model: &FittedModel<T>, data: &LongitudinalDataset<T>, t: usize) -> Result<Vec<T>> {
    let v = rule_features(data, t, &model.feature_names)?;
    model.predict(&v)
}

/// Evaluates the rule for every unit at decision point `t`.
pub fn apply_rule<T: Real>(rule: &TreatmentRule<T>, data: &LongitudinalDataset<T>, t: usize) -> Result<Vec<u8>> {
    data.check_time(t)?;
    let n = data.n_units();
    match rule {
        TreatmentRule::StaticAll { value } => Ok(vec![binary(*value)?; n]),
        TreatmentRule::Threshold {
            column,
            op,
            cutoff,
            if_true,
            if_false,
        } => {
            let (yes, no) = (binary(*if_true)?, binary(*if_false)?);
            let h = history_at(data, t)?;
            let idx = h
                .names
                .iter()
                .position(|c| c == column)
                .ok_or_else(|| Error::ColumnNotInHistory { column: column.clone(), t })?;
            Ok(data
                .column_values(h.columns[idx])
                .into_iter()
                .map(|v| if op.holds(v, *cutoff) { yes } else { no })
                .collect())
        }
        TreatmentRule::LearnedBlip(r) => {
            let model = r
                .stages
                .get(t - 1)
                .ok_or_else(|| Error::Rule(format!("learned rule has no stage for t={t}")))?;
            Ok(blip_predictions(model, data, t)?
                .into_iter()
                .map(|b| assign_from_blip(b, r.direction))
                .collect())
        }
        TreatmentRule::CrossFitBlip(r) => {
            let stage = r
                .stages
                .get(t - 1)
                .ok_or_else(|| Error::Rule(format!("cross-fit rule has no stage for t={t}")))?;
            if stage.folds.len() != n {
                return Err(Error::Rule(format!(
                    "cross-fit rule was learned on {} units, data has {n}",
                    stage.folds.len()
                )));
            }
            let per_fold = stage
                .models
                .iter()
                .map(|m| blip_predictions(m, data, t))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..n)
                .map(|i| assign_from_blip(per_fold[stage.folds[i]][i], r.direction))
                .collect())
        }
        TreatmentRule::ObservedTreatment => Ok(data.treatment(t).to_vec()),
        TreatmentRule::PerTime { rules } => {
            let r = rules
                .get(t - 1)
                .ok_or_else(|| Error::Rule(format!("per-time rule has no entry for t={t}")))?;
            apply_rule(r, data, t)
        }
    }
}

/// Assignments at every time-point `1..=tau`.
pub fn apply_rule_all<T: Real>(rule: &TreatmentRule<T>, data: &LongitudinalDataset<T>) -> Result<Vec<Vec<u8>>> {
    (1..=data.tau()).map(|t| apply_rule(rule, data, t)).collect()
}
