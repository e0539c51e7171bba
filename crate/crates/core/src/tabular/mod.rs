//! Columnar dataset with explicit per-cell missingness masks.
//!
//! Values and masks always travel together: a cell whose mask is `false` is
//! never read except through [`Overlay`], which hands out imputed values.

mod csvio;
mod formula;
mod indicators;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use csvio::format_sig17;
pub use csvio::{read_csv, read_csv_from, write_csv, write_csv_to};
pub use formula::{design_matrix, response_vector, DesignMatrix, Formula, Term};
pub use indicators::{derive_indicators, IndicatorSource, SubMechanismIndicators};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String>, baseline: String },
}

impl ColumnKind {
    pub fn categorical<S: Into<String>>(levels: impl IntoIterator<Item = S>, baseline: &str) -> Self {
        ColumnKind::Categorical {
            levels: levels.into_iter().map(Into::into).collect(),
            baseline: baseline.to_string(),
        }
    }

    /// Categorical kind for free-text labels, levels in first-seen order. A
    /// filler level is added when fewer than two labels are given.
    pub fn labels<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        let mut levels: Vec<String> = Vec::new();
        for l in labels {
            let l = l.into();
            if !levels.contains(&l) {
                levels.push(l);
            }
        }
        let mut filler = String::from("-");
        while levels.len() < 2 {
            if !levels.contains(&filler) {
                levels.push(filler.clone());
            }
            filler.push('-');
        }
        let baseline = levels[0].clone();
        ColumnKind::Categorical { levels, baseline }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical { .. })
    }

    /// Index of the baseline level for categorical kinds.
    pub fn baseline_index(&self) -> Option<usize> {
        match self {
            ColumnKind::Categorical { levels, baseline } => levels.iter().position(|l| l == baseline),
            _ => None,
        }
    }

    pub fn levels(&self) -> &[String] {
        match self {
            ColumnKind::Categorical { levels, .. } => levels,
            _ => &[],
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let ColumnKind::Categorical { levels, baseline } = self {
            if levels.len() < 2 {
                return Err(Error::Schema(format!("categorical column `{name}` needs at least 2 levels")));
            }
            if !levels.contains(baseline) {
                return Err(Error::Schema(format!(
                    "baseline `{baseline}` of column `{name}` is not a declared level"
                )));
            }
            let mut sorted = levels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != levels.len() {
                return Err(Error::Schema(format!("column `{name}` declares duplicate levels")));
            }
        }
        Ok(())
    }

    fn check_value(&self, v: f64) -> bool {
        match self {
            ColumnKind::Continuous => v.is_finite(),
            ColumnKind::Binary => v == 0.0 || v == 1.0,
            ColumnKind::Categorical { levels, .. } => {
                v >= 0.0 && v.fract() == 0.0 && (v as usize) < levels.len()
            }
        }
    }
}

/// One typed column. Categorical values are stored as level indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    kind: ColumnKind,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl Column {
    pub fn new(kind: ColumnKind, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::Dimension(format!(
                "{} values but {} mask entries",
                values.len(),
                mask.len()
            )));
        }
        for (i, (&v, &m)) in values.iter().zip(&mask).enumerate() {
            if m && !kind.check_value(v) {
                return Err(Error::Schema(format!("row {i}: value {v} is invalid for {kind:?}")));
            }
        }
        Ok(Column { kind, values, mask })
    }

    /// Column built from optional cells; `None` is missing.
    pub fn from_options(kind: ColumnKind, cells: &[Option<f64>]) -> Result<Self> {
        let values = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
        let mask = cells.iter().map(Option::is_some).collect();
        Column::new(kind, values, mask)
    }

    pub fn complete(kind: ColumnKind, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Column::new(kind, values, mask)
    }

    pub fn kind(&self) -> &ColumnKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize) -> Option<f64> {
        self.mask[row].then(|| self.values[row])
    }

    pub fn is_observed(&self, row: usize) -> bool {
        self.mask[row]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Fill a cell (used by imputation writers on overlay copies).
    pub(crate) fn fill(&mut self, row: usize, value: f64) {
        debug_assert!(self.kind.check_value(value));
        self.values[row] = value;
        self.mask[row] = true;
    }

    pub(crate) fn take(&self, rows: &[usize]) -> Column {
        Column {
            kind: self.kind.clone(),
            values: rows.iter().map(|&r| self.values[r]).collect(),
            mask: rows.iter().map(|&r| self.mask[r]).collect(),
        }
    }
}

/// Declared column kinds, in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Schema {
    pub fn new(columns: Vec<(&str, ColumnKind)>) -> Self {
        Schema {
            columns: columns
                .into_iter()
                .map(|(n, k)| ColumnSpec { name: n.to_string(), kind: k })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.kind)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(Error::Schema(format!("column {i} has an empty name")));
            }
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            c.kind.validate(&c.name)?;
        }
        Ok(())
    }
}

/// Read access shared by [`ColumnTable`] and [`Overlay`].
pub trait TableView: Sync {
    fn n_rows(&self) -> usize;
    fn column(&self, name: &str) -> Option<&Column>;

    fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}`")))
    }

    fn cell(&self, name: &str, row: usize) -> Result<Option<f64>> {
        Ok(self.require(name)?.get(row))
    }
}

/// Immutable columnar table.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTable {
    names: Vec<String>,
    columns: HashMap<String, Column>,
    n_rows: usize,
}

impl ColumnTable {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |(_, c)| c.len());
        let mut names = Vec::with_capacity(columns.len());
        let mut map = HashMap::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n_rows {
                return Err(Error::Dimension(format!(
                    "column `{name}` has {} rows, expected {n_rows}",
                    col.len()
                )));
            }
            col.kind.validate(&name)?;
            if map.insert(name.clone(), col).is_some() {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
            names.push(name);
        }
        Ok(ColumnTable { names, columns: map, n_rows })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .names
                .iter()
                .map(|n| ColumnSpec { name: n.clone(), kind: self.columns[n].kind.clone() })
                .collect(),
        }
    }

    /// New table made of the given rows (repeats allowed), e.g. a bootstrap sample.
    pub fn take_rows(&self, rows: &[usize]) -> ColumnTable {
        ColumnTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|(n, c)| (n.clone(), c.take(rows)))
                .collect(),
            n_rows: rows.len(),
        }
    }

    /// Same table with one column replaced or appended.
    pub fn with_column(&self, name: &str, column: Column) -> Result<ColumnTable> {
        if column.len() != self.n_rows {
            return Err(Error::Dimension(format!(
                "column `{name}` has {} rows, expected {}",
                column.len(),
                self.n_rows
            )));
        }
        let mut out = self.clone();
        if !out.columns.contains_key(name) {
            out.names.push(name.to_string());
        }
        out.columns.insert(name.to_string(), column);
        Ok(out)
    }
}

impl TableView for ColumnTable {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn column(&self, name: &str) -> Option<&Column> {
        self.columns.get(name)
    }
}

/// Per-imputation copy-on-write view over a base table.
///
/// Imputed cells live in replacement columns; the base table is never touched.
#[derive(Debug, Clone)]
pub struct Overlay<'a> {
    base: &'a ColumnTable,
    replaced: HashMap<String, Column>,
}

impl<'a> Overlay<'a> {
    pub fn new(base: &'a ColumnTable) -> Self {
        Overlay { base, replaced: HashMap::new() }
    }

    pub fn base(&self) -> &'a ColumnTable {
        self.base
    }

    pub fn impute(&mut self, name: &str, row: usize, value: f64) -> Result<()> {
        if !self.replaced.contains_key(name) {
            let col = self.base.require(name)?.clone();
            self.replaced.insert(name.to_string(), col);
        }
        let col = self.replaced.get_mut(name).expect("inserted above");
        if col.is_observed(row) {
            return Err(Error::Invalid(format!(
                "refusing to overwrite available cell ({row}, `{name}`)"
            )));
        }
        if !col.kind.check_value(value) {
            return Err(Error::Invalid(format!("imputed value {value} invalid for `{name}`")));
        }
        col.fill(row, value);
        Ok(())
    }

    /// Materialize the overlay as a standalone table.
    pub fn to_table(&self) -> ColumnTable {
        let mut out = self.base.clone();
        for (n, c) in &self.replaced {
            out.columns.insert(n.clone(), c.clone());
        }
        out
    }
}

impl TableView for Overlay<'_> {
    fn n_rows(&self) -> usize {
        self.base.n_rows
    }

    fn column(&self, name: &str) -> Option<&Column> {
        self.replaced.get(name).or_else(|| self.base.column(name))
    }
}
