//! Longitudinal data model: covariate blocks, binary treatments and a terminal
//! outcome, plus history and rule-covariate views and CSV ingestion.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Real;

/// Whether the outcome is desirable (maximize) or harmful (minimize).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    #[serde(alias = "max")]
    Maximize,
    #[serde(alias = "min")]
    Minimize,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "maximize" => Ok(Direction::Maximize),
            "min" | "minimize" => Ok(Direction::Minimize),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBlock<T> {
    pub names: Vec<String>,
    pub columns: Vec<Vec<T>>,
}

/// `n` units observed at `tau` decision points: covariates `L_t`, binary
/// treatments `A_t`, and one terminal outcome `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset<T> {
    n_units: usize,
    covariates: Vec<CovariateBlock<T>>,
    treatment_names: Vec<String>,
    treatments: Vec<Vec<u8>>,
    outcome_name: String,
    outcome: Vec<T>,
}

/// Location of a column inside a dataset. Times are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnRef {
    Covariate { t: usize, index: usize },
    Treatment { t: usize },
}

impl<T: Real> LongitudinalDataset<T> {
    pub fn new(
        covariates: Vec<CovariateBlock<T>>,
        treatment_names: Vec<String>,
        treatments: Vec<Vec<u8>>,
        outcome_name: String,
        outcome: Vec<T>,
    ) -> Result<Self> {
        let tau = treatments.len();
        if tau == 0 {
            return Err(Error::Schema("at least one treatment time-point required".into()));
        }
        if covariates.len() != tau || treatment_names.len() != tau {
            return Err(Error::Schema(format!(
                "expected {tau} covariate blocks and treatment names, found {} and {}",
                covariates.len(),
                treatment_names.len()
            )));
        }
        let n = outcome.len();
        if n == 0 {
            return Err(Error::Schema("dataset has no units".into()));
        }
        let mut seen = HashSet::new();
        let all_names = covariates
            .iter()
            .flat_map(|b| b.names.iter())
            .chain(&treatment_names)
            .chain(std::iter::once(&outcome_name));
        for name in all_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
        }
        for block in &covariates {
            if block.names.len() != block.columns.len() {
                return Err(Error::Dimension("covariate names/columns disagree".into()));
            }
            for (name, col) in block.names.iter().zip(&block.columns) {
                if col.len() != n {
                    return Err(Error::Dimension(format!("column `{name}` has {} rows, expected {n}", col.len())));
                }
                if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                    return Err(Error::MissingValue { row: row + 1, column: name.clone() });
                }
            }
        }
        for (name, a) in treatment_names.iter().zip(&treatments) {
            if a.len() != n {
                return Err(Error::Dimension(format!("column `{name}` has {} rows, expected {n}", a.len())));
            }
            if let Some(row) = a.iter().position(|&v| v > 1) {
                return Err(Error::NonBinaryTreatment {
                    row: row + 1,
                    column: name.clone(),
                    value: a[row].to_string(),
                });
            }
        }
        if let Some(row) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { row: row + 1, column: outcome_name });
        }
        Ok(Self {
            n_units: n,
            covariates,
            treatment_names,
            treatments,
            outcome_name,
            outcome,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn tau(&self) -> usize {
        self.treatments.len()
    }

    pub fn outcome(&self) -> &[T] {
        &self.outcome
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    /// Treatment vector `A_t` (1-based `t`).
    pub fn treatment(&self, t: usize) -> &[u8] {
        &self.treatments[t - 1]
    }

    pub fn treatment_name(&self, t: usize) -> &str {
        &self.treatment_names[t - 1]
    }

    pub fn covariates(&self, t: usize) -> &CovariateBlock<T> {
        &self.covariates[t - 1]
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.tau() {
            return Err(Error::TimeOutOfRange { t, tau: self.tau() });
        }
        Ok(())
    }

    pub fn locate(&self, name: &str) -> Option<ColumnRef> {
        for (ti, block) in self.covariates.iter().enumerate() {
            if let Some(index) = block.names.iter().position(|n| n == name) {
                return Some(ColumnRef::Covariate { t: ti + 1, index });
            }
        }
        self.treatment_names
            .iter()
            .position(|n| n == name)
            .map(|ti| ColumnRef::Treatment { t: ti + 1 })
    }

    pub fn column_name(&self, col: ColumnRef) -> &str {
        match col {
            ColumnRef::Covariate { t, index } => &self.covariates[t - 1].names[index],
            ColumnRef::Treatment { t } => &self.treatment_names[t - 1],
        }
    }

    pub fn column_values(&self, col: ColumnRef) -> Vec<T> {
        match col {
            ColumnRef::Covariate { t, index } => self.covariates[t - 1].columns[index].clone(),
            ColumnRef::Treatment { t } => self.treatments[t - 1]
                .iter()
                .map(|&a| if a == 1 { T::one() } else { T::zero() })
                .collect(),
        }
    }

    /// Copy of the dataset restricted to the given rows, in the given order.
    pub fn select_units(&self, rows: &[usize]) -> Self {
        let pick = |v: &Vec<T>| rows.iter().map(|&i| v[i]).collect::<Vec<T>>();
        Self {
            n_units: rows.len(),
            covariates: self
                .covariates
                .iter()
                .map(|b| CovariateBlock {
                    names: b.names.clone(),
                    columns: b.columns.iter().map(pick).collect(),
                })
                .collect(),
            treatment_names: self.treatment_names.clone(),
            treatments: self
                .treatments
                .iter()
                .map(|a| rows.iter().map(|&i| a[i]).collect())
                .collect(),
            outcome_name: self.outcome_name.clone(),
            outcome: pick(&self.outcome),
        }
    }

    /// Writes the dataset in the wide layout (one row per unit, chronological columns).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = Vec::new();
        for t in 1..=self.tau() {
            header.extend(self.covariates(t).names.iter().map(String::as_str));
            header.push(self.treatment_name(t));
        }
        header.push(&self.outcome_name);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_units {
            record.clear();
            for t in 1..=self.tau() {
                record.extend(self.covariates(t).columns.iter().map(|c| format!("{}", c[i])));
                record.push(self.treatment(t)[i].to_string());
            }
            record.push(format!("{}", self.outcome[i]));
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| Error::Io { path: "<writer>".into(), source })?;
        Ok(())
    }
}

/// Ordered columns of `H_t = (L_1, A_1, ..., A_{t-1}, L_t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryView {
    pub t: usize,
    pub columns: Vec<ColumnRef>,
    pub names: Vec<String>,
}

impl HistoryView {
    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn features<T: Real>(&self, data: &LongitudinalDataset<T>) -> FeatureMatrix<T> {
        let columns = self.columns.iter().map(|&c| data.column_values(c)).collect();
        FeatureMatrix::new(self.names.clone(), columns, data.n_units())
            .expect("history columns share the dataset row count")
    }
}

/// History at decision point `t`: covariate blocks in chronological order with
/// each earlier treatment placed after its own time-point's covariates.
pub fn history_at<T: Real>(data: &LongitudinalDataset<T>, t: usize) -> Result<HistoryView> {
    data.check_time(t)?;
    let mut columns = Vec::new();
    for s in 1..=t {
        let block = data.covariates(s);
        columns.extend((0..block.names.len()).map(|index| ColumnRef::Covariate { t: s, index }));
        if s < t {
            columns.push(ColumnRef::Treatment { t: s });
        }
    }
    let names = columns.iter().map(|&c| data.column_name(c).to_string()).collect();
    Ok(HistoryView { t, columns, names })
}

/// Columns `V_t` each stage's rule may read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleCovariateSpec {
    pub per_time: Vec<Vec<String>>,
}

impl RuleCovariateSpec {
    pub fn new(per_time: Vec<Vec<String>>) -> Self {
        Self { per_time }
    }

    /// Every rule may read the full history.
    pub fn full_history<T: Real>(data: &LongitudinalDataset<T>) -> Self {
        let per_time = (1..=data.tau())
            .map(|t| history_at(data, t).expect("t in range").names)
            .collect();
        Self { per_time }
    }

    pub fn columns_at(&self, t: usize) -> &[String] {
        &self.per_time[t - 1]
    }

    pub fn validate<T: Real>(&self, data: &LongitudinalDataset<T>) -> Result<()> {
        if self.per_time.len() != data.tau() {
            return Err(Error::Schema(format!(
                "rule covariates given for {} time-points, dataset has {}",
                self.per_time.len(),
                data.tau()
            )));
        }
        for t in 1..=data.tau() {
            let h = history_at(data, t)?;
            for c in self.columns_at(t) {
                if data.locate(c).is_none() {
                    return Err(Error::UnknownColumn { column: c.clone() });
                }
                if !h.contains(c) {
                    return Err(Error::ColumnNotInHistory { column: c.clone(), t });
                }
            }
        }
        Ok(())
    }

    /// Feature matrix of `V_t`.
    pub fn features<T: Real>(&self, data: &LongitudinalDataset<T>, t: usize) -> Result<FeatureMatrix<T>> {
        rule_features(data, t, self.columns_at(t))
    }
}

/// Feature matrix for `names`, each required to be part of `H_t`.
pub fn rule_features<T: Real>(
    data: &LongitudinalDataset<T>,
    t: usize,
    names: &[String],
) -> Result<FeatureMatrix<T>> {
    let h = history_at(data, t)?;
    let mut m = FeatureMatrix::empty(data.n_units());
    for name in names {
        let idx = h
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::ColumnNotInHistory { column: name.clone(), t })?;
        m.push_column(name.clone(), data.column_values(h.columns[idx]))?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRole {
    Outcome,
    Treatment(usize),
    Covariate(usize),
    Ignore,
}

/// Column-role map read from the JSON schema, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub roles: Vec<(String, ColumnRole)>,
    pub rule_covariates: Option<RuleCovariateSpec>,
}

impl Schema {
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Schema("schema must be a JSON object".into()))?;
        let mut roles = Vec::new();
        let mut rule_covariates = None;
        for (key, v) in obj {
            if key == "rule_covariates" {
                rule_covariates = Some(parse_rule_covariates(v)?);
                continue;
            }
            roles.push((key.clone(), parse_role(key, v)?));
        }
        let schema = Self { roles, rule_covariates };
        schema.check()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    /// Schema matching the columns written by [`LongitudinalDataset::write_csv`].
    pub fn for_dataset<T: Real>(data: &LongitudinalDataset<T>, rule_covariates: Option<RuleCovariateSpec>) -> Self {
        let mut roles = Vec::new();
        for t in 1..=data.tau() {
            roles.extend(data.covariates(t).names.iter().map(|c| (c.clone(), ColumnRole::Covariate(t))));
            roles.push((data.treatment_name(t).to_string(), ColumnRole::Treatment(t)));
        }
        roles.push((data.outcome_name().to_string(), ColumnRole::Outcome));
        Self { roles, rule_covariates }
    }

    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        for (name, role) in &self.roles {
            let v = match role {
                ColumnRole::Outcome => Value::from("outcome"),
                ColumnRole::Ignore => Value::from("ignore"),
                ColumnRole::Treatment(t) => serde_json::json!({ "treatment": t }),
                ColumnRole::Covariate(t) => serde_json::json!({ "covariate": t }),
            };
            map.insert(name.clone(), v);
        }
        if let Some(rc) = &self.rule_covariates {
            map.insert("rule_covariates".into(), serde_json::to_value(rc).expect("serializable"));
        }
        Value::Object(map)
    }

    pub fn tau(&self) -> usize {
        self.roles
            .iter()
            .filter_map(|(_, r)| match r {
                ColumnRole::Treatment(t) => Some(*t),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn check(&self) -> Result<()> {
        let outcomes = self.roles.iter().filter(|(_, r)| *r == ColumnRole::Outcome).count();
        if outcomes != 1 {
            return Err(Error::Schema(format!("expected exactly one outcome column, found {outcomes}")));
        }
        let tau = self.tau();
        if tau == 0 {
            return Err(Error::Schema("no treatment columns".into()));
        }
        for t in 1..=tau {
            let count = self
                .roles
                .iter()
                .filter(|(_, r)| *r == ColumnRole::Treatment(t))
                .count();
            if count != 1 {
                return Err(Error::Schema(format!("expected one treatment column for t={t}, found {count}")));
            }
        }
        for (name, role) in &self.roles {
            if let ColumnRole::Covariate(t) = role {
                if *t == 0 || *t > tau {
                    return Err(Error::Schema(format!("covariate `{name}` assigned to t={t} outside 1..={tau}")));
                }
            }
        }
        Ok(())
    }
}

fn parse_role(key: &str, v: &Value) -> Result<ColumnRole> {
    let bad = || Error::Schema(format!("unrecognised role for column `{key}`: {v}"));
    match v {
        Value::String(s) if s == "outcome" => Ok(ColumnRole::Outcome),
        Value::String(s) if s == "ignore" || s == "id" => Ok(ColumnRole::Ignore),
        Value::Object(m) if m.len() == 1 => {
            let (role, t) = m.iter().next().expect("one entry");
            let t = t.as_u64().filter(|&t| t >= 1).ok_or_else(bad)? as usize;
            match role.as_str() {
                "treatment" => Ok(ColumnRole::Treatment(t)),
                "covariate" => Ok(ColumnRole::Covariate(t)),
                _ => Err(bad()),
            }
        }
        _ => Err(bad()),
    }
}

fn parse_rule_covariates(v: &Value) -> Result<RuleCovariateSpec> {
    let names = |v: &Value| -> Result<Vec<String>> {
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Schema(format!("rule_covariates: {e}")))
    };
    match v {
        Value::Array(items) => Ok(RuleCovariateSpec::new(items.iter().map(names).collect::<Result<_>>()?)),
        // {"1": [...], "2": [...]}
        Value::Object(m) => {
            let mut per: Vec<(usize, Vec<String>)> = m
                .iter()
                .map(|(k, v)| {
                    let t = k
                        .parse::<usize>()
                        .map_err(|_| Error::Schema(format!("rule_covariates key `{k}` is not a time index")))?;
                    Ok((t, names(v)?))
                })
                .collect::<Result<_>>()?;
            per.sort_by_key(|(t, _)| *t);
            if per.iter().enumerate().any(|(i, (t, _))| *t != i + 1) {
                return Err(Error::Schema("rule_covariates keys must be 1..=tau".into()));
            }
            Ok(RuleCovariateSpec::new(per.into_iter().map(|(_, v)| v).collect()))
        }
        _ => Err(Error::Schema("rule_covariates must be an array or object".into())),
    }
}

/// Reads a wide-layout CSV file (header row required) according to `schema`.
pub fn load_csv<T: Real>(path: &Path, schema: &Schema) -> Result<LongitudinalDataset<T>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<T: Real, R: Read>(reader: R, schema: &Schema) -> Result<LongitudinalDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn { column: name.to_string() })
    };

    let tau = schema.tau();
    let mut cov_names: Vec<Vec<String>> = vec![Vec::new(); tau];
    let mut cov_idx: Vec<Vec<usize>> = vec![Vec::new(); tau];
    let mut trt_names = vec![String::new(); tau];
    let mut trt_idx = vec![0usize; tau];
    let mut outcome = (String::new(), 0usize);
    for (name, role) in &schema.roles {
        match role {
            ColumnRole::Outcome => outcome = (name.clone(), index_of(name)?),
            ColumnRole::Treatment(t) => {
                trt_names[t - 1] = name.clone();
                trt_idx[t - 1] = index_of(name)?;
            }
            ColumnRole::Covariate(t) => {
                cov_names[t - 1].push(name.clone());
                cov_idx[t - 1].push(index_of(name)?);
            }
            ColumnRole::Ignore => {}
        }
    }

    let mut cov_cols: Vec<Vec<Vec<T>>> = cov_idx.iter().map(|ix| vec![Vec::new(); ix.len()]).collect();
    let mut trt_cols: Vec<Vec<u8>> = vec![Vec::new(); tau];
    let mut y = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |idx: usize, name: &str| -> Result<&str> {
            match record.get(idx) {
                None | Some("") | Some("NA") | Some("NaN") | Some("nan") => Err(Error::MissingValue {
                    row,
                    column: name.to_string(),
                }),
                Some(s) => Ok(s),
            }
        };
        let real = |idx: usize, name: &str| -> Result<T> {
            let s = cell(idx, name)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::lit)
                .ok_or_else(|| Error::InvalidValue { row, column: name.to_string(), value: s.to_string() })
        };
        for t in 0..tau {
            for (k, &idx) in cov_idx[t].iter().enumerate() {
                cov_cols[t][k].push(real(idx, &cov_names[t][k])?);
            }
            let s = cell(trt_idx[t], &trt_names[t])?;
            let a = match s.parse::<f64>() {
                Ok(v) if v == 0.0 => 0,
                Ok(v) if v == 1.0 => 1,
                _ => {
                    return Err(Error::NonBinaryTreatment {
                        row,
                        column: trt_names[t].clone(),
                        value: s.to_string(),
                    })
                }
            };
            trt_cols[t].push(a);
        }
        y.push(real(outcome.1, &outcome.0)?);
    }
    let covariates = cov_names
        .into_iter()
        .zip(cov_cols)
        .map(|(names, columns)| CovariateBlock { names, columns })
        .collect();
    LongitudinalDataset::new(covariates, trt_names, trt_cols, outcome.0, y)
}
