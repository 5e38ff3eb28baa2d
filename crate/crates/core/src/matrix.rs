//! Named, column-major feature matrices passed to the learners.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    names: Vec<String>,
    columns: Vec<Vec<T>>,
    n_rows: usize,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(names: Vec<String>, columns: Vec<Vec<T>>, n_rows: usize) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some((name, col)) = names.iter().zip(&columns).find(|(_, c)| c.len() != n_rows) {
            return Err(Error::Dimension(format!(
                "column `{name}` has {} rows, expected {n_rows}",
                col.len()
            )));
        }
        Ok(Self {
            names,
            columns,
            n_rows,
        })
    }

    /// Matrix with `n_rows` rows and no columns (intercept-only designs).
    pub fn empty(n_rows: usize) -> Self {
        Self {
            names: Vec::new(),
            columns: Vec::new(),
            n_rows,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<T>] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<T>) -> Result<()> {
        if values.len() != self.n_rows {
            return Err(Error::Dimension(format!(
                "pushed column has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        self.names.push(name.into());
        self.columns.push(values);
        Ok(())
    }

    /// Copy with every entry of column `name` replaced by `value`.
    pub fn with_constant(&self, name: &str, value: T) -> Result<Self> {
        let j = self.column_index(name).ok_or_else(|| Error::ColumnMismatch {
            column: name.to_string(),
        })?;
        let mut out = self.clone();
        out.columns[j].iter_mut().for_each(|v| *v = value);
        Ok(out)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            n_rows: rows.len(),
        }
    }

    /// Columns reordered (by name) to match `names`.
    pub fn aligned_to(&self, names: &[String]) -> Result<std::borrow::Cow<'_, Self>> {
        if self.names == names {
            return Ok(std::borrow::Cow::Borrowed(self));
        }
        let columns = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .map(|j| self.columns[j].clone())
                    .ok_or_else(|| Error::ColumnMismatch { column: n.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(std::borrow::Cow::Owned(Self {
            names: names.to_vec(),
            columns,
            n_rows: self.n_rows,
        }))
    }

    pub fn all_finite(&self) -> bool {
        self.columns.iter().flatten().all(|v| v.is_finite())
    }

    pub fn row_into(&self, i: usize, buf: &mut Vec<T>) {
        buf.clear();
        buf.extend(self.columns.iter().map(|c| c[i]));
    }
}
