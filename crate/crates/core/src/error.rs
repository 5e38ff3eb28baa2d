use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("unknown column `{column}`")]
    UnknownColumn { column: String },
    #[error("non-binary treatment at row {row}, column `{column}`: `{value}`")]
    NonBinaryTreatment {
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("invalid numeric value at row {row}, column `{column}`: `{value}`")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("time index {t} out of range 1..={tau}")]
    TimeOutOfRange { t: usize, tau: usize },
    #[error("column `{column}` is not available in the history at time {t}")]
    ColumnNotInHistory { column: String, t: usize },
    #[error("feature layout mismatch: model expects column `{column}`")]
    ColumnMismatch { column: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid learner specification: {0}")]
    InvalidSpec(String),
    #[error("invalid cross-fitting plan: {0}")]
    InvalidPlan(String),
    #[error("training split for fold {fold} contains only treatment arm {arm} ({size} rows)")]
    SingleArm { fold: usize, arm: u8, size: usize },
    #[error("rule cannot be evaluated: {0}")]
    Rule(String),
    #[error("risk ratio undefined: {0}; report the difference scale instead")]
    Ratio(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage t={t}: {source}")]
    Stage {
        t: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_stage(self, t: usize) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                t,
                source: Box::new(e),
            },
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Schema(_) => "schema",
            Error::UnknownColumn { .. } => "unknown_column",
            Error::NonBinaryTreatment { .. } => "non_binary_treatment",
            Error::MissingValue { .. } => "missing_value",
            Error::InvalidValue { .. } => "invalid_value",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::ColumnNotInHistory { .. } => "column_not_in_history",
            Error::ColumnMismatch { .. } => "column_mismatch",
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidPlan(_) => "invalid_plan",
            Error::SingleArm { .. } => "single_arm",
            Error::Rule(_) => "rule",
            Error::Ratio(_) => "ratio",
            Error::Config(_) => "config",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}
