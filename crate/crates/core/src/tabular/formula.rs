//! A small model-formula language: `Y ~ X + Z1 + X:Z1`.
//!
//! Only main effects and two-way interactions are supported. Categorical
//! columns expand to reference-cell indicators against their baseline level.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, TableView};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Main(String),
    Interaction(String, String),
}

impl Term {
    fn columns(&self) -> Vec<&str> {
        match self {
            Term::Main(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(a) => write!(f, "{a}"),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Formula {
    pub response: Option<String>,
    pub terms: Vec<Term>,
    pub intercept: bool,
}

impl Formula {
    pub fn parse(s: &str) -> Result<Self> {
        s.parse()
    }

    /// Same terms, no intercept column (Cox models).
    pub fn without_intercept(&self) -> Formula {
        Formula { intercept: false, ..self.clone() }
    }

    /// Distinct predictor columns, in first-appearance order.
    pub fn predictors(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.terms {
            for c in t.columns() {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Whether every predictor cell of `row` is available in `view`.
    pub fn predictors_available(&self, view: &dyn TableView, row: usize) -> Result<bool> {
        for c in self.predictors() {
            if view.require(c)?.get(row).is_none() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn check_columns(&self, view: &dyn TableView) -> Result<()> {
        if let Some(r) = &self.response {
            view.require(r)?;
        }
        for c in self.predictors() {
            view.require(c)?;
        }
        Ok(())
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lhs, rhs) = match s.split_once('~') {
            Some((l, r)) => (l.trim(), r.trim()),
            None => return Err(Error::Formula(format!("`{s}` has no `~`"))),
        };
        let response = if lhs.is_empty() {
            None
        } else {
            check_name(lhs, s)?;
            Some(lhs.to_string())
        };
        if rhs.is_empty() {
            return Err(Error::Formula(format!("`{s}` has an empty right-hand side")));
        }
        let mut intercept = true;
        let mut terms = Vec::new();
        // "- 1" removes the intercept; rewrite as a signed token stream.
        let signed = rhs.replace('-', "+-");
        for (i, raw) in signed.split('+').enumerate() {
            let tok: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
            match tok.as_str() {
                "" if i == 0 && rhs.starts_with('-') => {}
                "" => return Err(Error::Formula(format!("empty term in `{s}`"))),
                "1" => intercept = true,
                "0" | "-1" => intercept = false,
                t if t.starts_with('-') => {
                    return Err(Error::Formula(format!("only `- 1` may be subtracted in `{s}`")))
                }
                t => {
                    let term = match t.split(':').collect::<Vec<_>>().as_slice() {
                        [a] => {
                            check_name(a, s)?;
                            Term::Main(a.to_string())
                        }
                        [a, b] => {
                            check_name(a, s)?;
                            check_name(b, s)?;
                            if a == b {
                                return Err(Error::Formula(format!("self-interaction `{t}` in `{s}`")));
                            }
                            Term::Interaction(a.to_string(), b.to_string())
                        }
                        _ => {
                            return Err(Error::Formula(format!(
                                "only two-way interactions are supported (`{t}` in `{s}`)"
                            )))
                        }
                    };
                    if terms.contains(&term) {
                        return Err(Error::Formula(format!("duplicate term `{t}` in `{s}`")));
                    }
                    terms.push(term);
                }
            }
        }
        if terms.is_empty() && !intercept {
            return Err(Error::Formula(format!("`{s}` has no terms")));
        }
        Ok(Formula { response, terms, intercept })
    }
}

fn check_name(name: &str, src: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '.')
        && !name.chars().next().unwrap().is_ascii_digit();
    if ok {
        Ok(())
    } else {
        Err(Error::Formula(format!("invalid column name `{name}` in `{src}`")))
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = &self.response {
            write!(f, "{r} ")?;
        }
        write!(f, "~")?;
        let mut parts: Vec<String> = self.terms.iter().map(ToString::to_string).collect();
        if !self.intercept {
            parts.insert(0, "0".into());
        } else if parts.is_empty() {
            parts.push("1".into());
        }
        write!(f, " {}", parts.join(" + "))
    }
}

impl TryFrom<String> for Formula {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Formula> for String {
    fn from(f: Formula) -> String {
        f.to_string()
    }
}

/// Dense design matrix plus the name of every column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

/// Encoded columns of one variable: (name, per-row values).
fn encode(view: &dyn TableView, name: &str, rows: &[usize]) -> Result<Vec<(String, Vec<f64>)>> {
    let col = view.require(name)?;
    let mut raw = Vec::with_capacity(rows.len());
    for &r in rows {
        match col.get(r) {
            Some(v) => raw.push(v),
            None => return Err(Error::MissingValue { row: r, column: name.to_string() }),
        }
    }
    Ok(match col.kind() {
        ColumnKind::Continuous | ColumnKind::Binary => vec![(name.to_string(), raw)],
        ColumnKind::Categorical { levels, baseline } => levels
            .iter()
            .enumerate()
            .filter(|(_, l)| *l != baseline)
            .map(|(j, l)| {
                let ind = raw.iter().map(|&v| if v as usize == j { 1.0 } else { 0.0 }).collect();
                (format!("{name}[{l}]"), ind)
            })
            .collect(),
    })
}

/// Build the design matrix of `formula` on the given rows (in that order).
pub fn design_matrix(view: &dyn TableView, formula: &Formula, rows: &[usize]) -> Result<DesignMatrix> {
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    if formula.intercept {
        cols.push(("(Intercept)".into(), vec![1.0; rows.len()]));
    }
    for term in &formula.terms {
        match term {
            Term::Main(a) => cols.extend(encode(view, a, rows)?),
            Term::Interaction(a, b) => {
                let ea = encode(view, a, rows)?;
                let eb = encode(view, b, rows)?;
                for (na, va) in &ea {
                    for (nb, vb) in &eb {
                        let prod = va.iter().zip(vb).map(|(x, y)| x * y).collect();
                        cols.push((format!("{na}:{nb}"), prod));
                    }
                }
            }
        }
    }
    let n = rows.len();
    let p = cols.len();
    let mut x = DMatrix::zeros(n, p);
    for (j, (_, v)) in cols.iter().enumerate() {
        x.column_mut(j).copy_from_slice(v);
    }
    Ok(DesignMatrix { x, names: cols.into_iter().map(|(n, _)| n).collect() })
}

/// Response values of `formula` on the given rows.
pub fn response_vector(view: &dyn TableView, formula: &Formula, rows: &[usize]) -> Result<Vec<f64>> {
    let name = formula
        .response
        .as_deref()
        .ok_or_else(|| Error::Formula(format!("`{formula}` has no response")))?;
    let col = view.require(name)?;
    rows.iter()
        .map(|&r| col.get(r).ok_or_else(|| Error::MissingValue { row: r, column: name.to_string() }))
        .collect()
}
