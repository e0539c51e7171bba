use super::{ColumnKind, TableView};
use crate::error::{Error, Result};

/// What makes sub-mechanism `k` equal to one for a subject.
#[derive(Debug, Clone, PartialEq)]
pub enum IndicatorSource {
    /// All of these columns are observed.
    Observed(Vec<String>),
    /// A binary decision column (enrollment and the like) equals one.
    Decision(String),
}

/// Sub-mechanism indicators `R` and their cumulative products `R_bar`,
/// stored `[mechanism][subject]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubMechanismIndicators {
    pub r: Vec<Vec<bool>>,
    pub r_bar: Vec<Vec<bool>>,
}

impl SubMechanismIndicators {
    pub fn n_mechanisms(&self) -> usize {
        self.r.len()
    }

    pub fn mean_r(&self, k: usize) -> f64 {
        mean(&self.r[k])
    }

    pub fn mean_r_bar(&self, k: usize) -> f64 {
        mean(&self.r_bar[k])
    }
}

fn mean(v: &[bool]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().filter(|b| **b).count() as f64 / v.len() as f64
}

pub fn derive_indicators(view: &dyn TableView, sources: &[IndicatorSource]) -> Result<SubMechanismIndicators> {
    let n = view.n_rows();
    let mut r = Vec::with_capacity(sources.len());
    let mut r_bar: Vec<Vec<bool>> = Vec::with_capacity(sources.len());
    for (k, src) in sources.iter().enumerate() {
        let prev = r_bar.last();
        let rk: Vec<bool> = match src {
            IndicatorSource::Observed(cols) => {
                if cols.is_empty() {
                    return Err(Error::Spec(format!(
                        "sub-mechanism {} observes no columns; use a decision indicator",
                        k + 1
                    )));
                }
                let cols = cols.iter().map(|c| view.require(c)).collect::<Result<Vec<_>>>()?;
                (0..n).map(|i| cols.iter().all(|c| c.is_observed(i))).collect()
            }
            IndicatorSource::Decision(name) => {
                let col = view.require(name)?;
                if *col.kind() != ColumnKind::Binary {
                    return Err(Error::Schema(format!("indicator column `{name}` must be binary")));
                }
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let reachable = prev.map_or(true, |p| p[i]);
                    match col.get(i) {
                        Some(v) => out.push(v == 1.0),
                        None if reachable => {
                            return Err(Error::MissingValue { row: i, column: name.clone() });
                        }
                        None => out.push(false),
                    }
                }
                out
            }
        };
        let bar = match prev {
            Some(p) => p.iter().zip(&rk).map(|(a, b)| *a && *b).collect(),
            None => rk.clone(),
        };
        r.push(rk);
        r_bar.push(bar);
    }
    Ok(SubMechanismIndicators { r, r_bar })
}
