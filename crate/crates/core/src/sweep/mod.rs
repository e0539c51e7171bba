//! Sensitivity sweeps over δ grids, connecting quantities and tipping points.
//!
//! Every cell of a sweep runs the blended analysis with the same base seed, so
//! the MAR anchor cell equals `run_blended` at δ = 0 bit for bit and rows of a
//! two-way sweep coincide with the matching one-axis sweep.

mod connecting;
mod tipping;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_blended, BlendedFit, EngineOptions, Method, ModularizationSpec};
use crate::error::{Error, Result};
use crate::inference::bootstrap_mi;
use crate::tabular::{read_csv_from, ColumnKind, ColumnTable, Schema, TableView};

pub use connecting::{connecting_binary, connecting_continuous, ConnectingEstimate};
pub use tipping::{bisect_tipping, tipping_point, SignificanceStatus, TIPPING_RESOLUTION};

/// `lo, lo + step, …, hi`, rounded to 12 decimals so 0.1 steps land on
/// readable values.
pub fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::Invalid(format!("bad grid {lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12 + 0.0).collect())
}

/// Parse `lo:hi:step`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Invalid(format!("grid `{s}` is not lo:hi:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    grid(v[0], v[1], v[2])
}

/// [−2, 2] by 0.1 for weighting mechanisms, [−6, 6] by 0.3 for imputation.
pub fn default_grid(method: &Method) -> Option<Vec<f64>> {
    match method {
        Method::Ipw { .. } => Some(grid(-2.0, 2.0, 0.1).expect("literal grid")),
        Method::Mi { .. } => Some(grid(-6.0, 6.0, 0.3).expect("literal grid")),
        Method::CoxIpw { .. } => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    /// 1-based sub-mechanism index.
    pub mechanism: usize,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    /// Full δ vector of the cell.
    pub delta: Vec<f64>,
    /// None when the analysis failed in this cell.
    pub theta_hat: Option<Vec<f64>>,
    pub ci: Option<(Vec<f64>, Vec<f64>)>,
    pub ess_min: Option<f64>,
    /// One entry per axis.
    pub connecting: Vec<Option<f64>>,
    pub error: Option<String>,
}

impl SweepCell {
    pub fn is_mar_anchor(&self) -> bool {
        self.delta.iter().all(|d| *d == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub k: usize,
    pub axes: Vec<SweepAxis>,
    /// Label of each axis' connecting quantity, e.g. `P(Z2=1|R=0)`.
    pub connecting_labels: Vec<String>,
    pub coefficient_names: Vec<String>,
    /// Row-major over the axes: the first axis varies slowest.
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub engine: EngineOptions,
    /// Bootstrap replicates per cell; 0 skips intervals.
    pub b: usize,
    pub alpha: f64,
}

impl SweepResult {
    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Cell at the given grid indices, one per axis.
    pub fn cell(&self, index: &[usize]) -> &SweepCell {
        let mut flat = 0;
        for (a, &i) in self.axes.iter().zip(index) {
            flat = flat * a.grid.len() + i;
        }
        &self.cells[flat]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coefficient_names.iter().position(|n| n == name)
    }

    fn connecting_header(&self, a: usize) -> String {
        format!("connecting_{}:{}", self.axes[a].mechanism, self.connecting_labels[a])
    }

    fn error_levels(&self) -> Vec<String> {
        let mut levels = vec!["none".to_string()];
        for c in &self.cells {
            if let Some(e) = &c.error {
                if !levels.contains(e) {
                    levels.push(e.clone());
                }
            }
        }
        if levels.len() < 2 {
            levels.push("failed".into());
        }
        levels
    }

    /// Schema of the long-format CSV.
    pub fn schema(&self) -> Schema {
        let mut cols: Vec<(String, ColumnKind)> = (1..=self.k).map(|j| (format!("delta_{j}"), ColumnKind::Continuous)).collect();
        cols.push(("mar_anchor".into(), ColumnKind::Binary));
        cols.push(("coef_name".into(), ColumnKind::labels(self.coefficient_names.clone())));
        for c in ["estimate", "ci_lo", "ci_hi", "ess_min"] {
            cols.push((c.into(), ColumnKind::Continuous));
        }
        for a in 0..self.axes.len() {
            cols.push((self.connecting_header(a), ColumnKind::Continuous));
        }
        cols.push(("error".into(), ColumnKind::categorical(self.error_levels(), "none")));
        Schema::new(cols.iter().map(|(n, k)| (n.as_str(), k.clone())).collect())
    }

    /// One row per (cell, coefficient).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        use crate::tabular::format_sig17;
        let opt = |v: Option<f64>| v.map(format_sig17).unwrap_or_default();
        let mut w = csv::Writer::from_writer(writer);
        let schema = self.schema();
        w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
        for cell in &self.cells {
            for (j, name) in self.coefficient_names.iter().enumerate() {
                let mut rec: Vec<String> = cell.delta.iter().map(|d| format_sig17(*d)).collect();
                rec.push(if cell.is_mar_anchor() { "1" } else { "0" }.into());
                rec.push(name.clone());
                rec.push(opt(cell.theta_hat.as_ref().map(|t| t[j])));
                rec.push(opt(cell.ci.as_ref().map(|c| c.0[j])));
                rec.push(opt(cell.ci.as_ref().map(|c| c.1[j])));
                rec.push(opt(cell.ess_min));
                for c in &cell.connecting {
                    rec.push(opt(*c));
                }
                rec.push(cell.error.clone().unwrap_or_else(|| "none".into()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild a sweep from its CSV. Axes come from the connecting-quantity
    /// headers, grids from the data.
    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<SweepResult> {
        let t = read_csv_from(reader, schema)?;
        let k = schema.columns.iter().filter(|c| c.name.starts_with("delta_")).count();
        let levels = match schema.get("coef_name") {
            Some(ColumnKind::Categorical { levels, .. }) => levels.clone(),
            _ => return Err(Error::Schema("coef_name must be categorical".into())),
        };
        // names in the order of the first cell; filler levels never appear
        let mut coefficient_names: Vec<String> = Vec::new();
        for i in 0..t.n_rows() {
            let name = &levels[t.cell("coef_name", i)?.ok_or_else(|| Error::Schema("missing coef_name".into()))? as usize];
            if coefficient_names.contains(name) {
                break;
            }
            coefficient_names.push(name.clone());
        }
        let error_levels = schema.get("error").map(|k| k.levels().to_vec()).unwrap_or_default();
        let connecting_cols: Vec<String> =
            schema.columns.iter().filter(|c| c.name.starts_with("connecting_")).map(|c| c.name.clone()).collect();
        let axes: Vec<usize> = connecting_cols
            .iter()
            .map(|c| {
                c.strip_prefix("connecting_")
                    .and_then(|r| r.split_once(':'))
                    .and_then(|(m, _)| m.parse().ok())
                    .ok_or_else(|| Error::Schema(format!("bad connecting column `{c}`")))
            })
            .collect::<Result<_>>()?;
        let connecting_labels = connecting_cols
            .iter()
            .map(|c| c.split_once(':').map(|(_, l)| l.to_string()).unwrap_or_default())
            .collect();
        let p = coefficient_names.len();
        if t.n_rows() % p != 0 {
            return Err(Error::Schema(format!("{} rows is not a multiple of {p} coefficients", t.n_rows())));
        }
        let get = |name: &str, row: usize| -> Result<Option<f64>> { t.cell(name, row) };
        let mut cells = Vec::with_capacity(t.n_rows() / p);
        for c in 0..t.n_rows() / p {
            let r0 = c * p;
            let delta = (1..=k).map(|j| get(&format!("delta_{j}"), r0).map(|v| v.unwrap_or(f64::NAN))).collect::<Result<Vec<_>>>()?;
            let col = |name: &str| -> Result<Option<Vec<f64>>> {
                let v = (0..p).map(|j| get(name, r0 + j)).collect::<Result<Vec<_>>>()?;
                Ok(v.into_iter().collect())
            };
            let theta_hat = col("estimate")?;
            let ci = match (col("ci_lo")?, col("ci_hi")?) {
                (Some(lo), Some(hi)) => Some((lo, hi)),
                _ => None,
            };
            let error = match get("error", r0)? {
                Some(e) if e > 0.0 => Some(error_levels[e as usize].clone()),
                _ => None,
            };
            cells.push(SweepCell {
                delta,
                theta_hat,
                ci,
                ess_min: get("ess_min", r0)?,
                connecting: connecting_cols.iter().map(|n| get(n, r0)).collect::<Result<_>>()?,
                error,
            });
        }
        let axes = axes
            .iter()
            .map(|&m| {
                let mut g: Vec<f64> = cells.iter().map(|c| c.delta[m - 1]).collect();
                g.sort_by(f64::total_cmp);
                g.dedup();
                SweepAxis { mechanism: m, grid: g }
            })
            .collect();
        Ok(SweepResult { k, axes, connecting_labels, coefficient_names, cells })
    }
}

/// What the connecting quantity of one axis reports.
#[derive(Debug, Clone)]
enum Connecting {
    Binary { column: String, scale: f64 },
    Continuous { column: String, scale: f64 },
    MeanImputed { variable: String },
    None,
}

impl Connecting {
    fn for_mechanism(table: &ColumnTable, spec: &ModularizationSpec, k: usize) -> Connecting {
        match &spec.sub_mechanisms[k].method {
            Method::Ipw { sensitivity, .. } if sensitivity.len() == 1 => {
                let s = &sensitivity[0];
                match table.column(&s.column).map(|c| c.kind()) {
                    Some(ColumnKind::Binary) => Connecting::Binary { column: s.column.clone(), scale: s.scale },
                    Some(ColumnKind::Continuous) => Connecting::Continuous { column: s.column.clone(), scale: s.scale },
                    _ => Connecting::None,
                }
            }
            Method::Mi { imputation } => imputation
                .iter()
                .find(|im| matches!(table.column(&im.variable).map(|c| c.kind()), Some(ColumnKind::Continuous | ColumnKind::Binary)))
                .map(|im| Connecting::MeanImputed { variable: im.variable.clone() })
                .unwrap_or(Connecting::None),
            _ => Connecting::None,
        }
    }

    fn label(&self) -> String {
        match self {
            Connecting::Binary { column, .. } => format!("P({column}=1|R=0)"),
            Connecting::Continuous { column, .. } => format!("E({column}|R=0)"),
            Connecting::MeanImputed { variable } => format!("mean_imputed({variable})"),
            Connecting::None => "none".into(),
        }
    }

    fn evaluate(&self, table: &ColumnTable, fit: &BlendedFit, mechanism: usize) -> Option<f64> {
        let delta = fit.delta[mechanism - 1];
        let detail = || fit.selection.iter().find(|s| s.mechanism == mechanism);
        match self {
            Connecting::Binary { column, scale } => {
                connecting_binary(table, detail()?, column, *scale, delta).ok().map(|e| e.value)
            }
            Connecting::Continuous { column, scale } => {
                connecting_continuous(table, detail()?, column, *scale, delta).ok().map(|e| e.value)
            }
            Connecting::MeanImputed { variable } => fit.mean_imputed(variable),
            Connecting::None => None,
        }
    }
}

fn check_axes(spec: &ModularizationSpec, axes: &[SweepAxis]) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::Invalid("a sweep needs at least one axis".into()));
    }
    for (i, a) in axes.iter().enumerate() {
        if a.mechanism == 0 || a.mechanism > spec.k() {
            return Err(Error::Invalid(format!("mechanism {} does not exist", a.mechanism)));
        }
        if axes[..i].iter().any(|b| b.mechanism == a.mechanism) {
            return Err(Error::Invalid(format!("mechanism {} is varied twice", a.mechanism)));
        }
        if !a.grid.contains(&0.0) {
            return Err(Error::Invalid(format!("grid of mechanism {} does not contain 0", a.mechanism)));
        }
        let sm = &spec.sub_mechanisms[a.mechanism - 1];
        if sm.is_decision() || sm.sensitivity().is_none() {
            return Err(Error::Spec(format!("sub-mechanism `{}` has no sensitivity parameter to vary", sm.name)));
        }
    }
    Ok(())
}

/// Number of cells of a Cartesian sweep.
pub fn cell_count(axes: &[SweepAxis]) -> usize {
    axes.iter().map(|a| a.grid.len()).product()
}

/// Cartesian sweep over any number of axes. Cell failures are recorded and
/// the sweep continues.
pub fn grid_sweep(
    table: &ColumnTable,
    spec: &ModularizationSpec,
    axes: &[SweepAxis],
    m: usize,
    seed: u64,
    options: &SweepOptions,
) -> Result<SweepResult> {
    check_axes(spec, axes)?;
    spec.check_table(table)?;
    let connecting: Vec<Connecting> = axes.iter().map(|a| Connecting::for_mechanism(table, spec, a.mechanism - 1)).collect();
    let engine = EngineOptions { keep_selection: true, ..options.engine.clone() };
    let n_cells = cell_count(axes);
    let deltas: Vec<Vec<f64>> = (0..n_cells)
        .map(|mut flat| {
            let mut d = vec![0.0; spec.k()];
            for a in axes.iter().rev() {
                d[a.mechanism - 1] = a.grid[flat % a.grid.len()];
                flat /= a.grid.len();
            }
            d
        })
        .collect();

    let cells: Vec<(SweepCell, Option<Vec<String>>)> = deltas
        .into_par_iter()
        .map(|delta| {
            let outcome = if options.b > 0 {
                bootstrap_mi(table, spec, &delta, options.b, m, options.alpha, seed, &engine)
                    .map(|b| (Some((b.ci_lower, b.ci_upper)), b.point))
            } else {
                run_blended(table, spec, &delta, m, seed, &engine).map(|f| (None, f))
            };
            match outcome {
                Ok((ci, fit)) => {
                    let cq = connecting.iter().zip(axes).map(|(c, a)| c.evaluate(table, &fit, a.mechanism)).collect();
                    let cell = SweepCell {
                        delta,
                        theta_hat: Some(fit.theta_hat.clone()),
                        ci,
                        ess_min: Some(fit.ess_min()),
                        connecting: cq,
                        error: None,
                    };
                    (cell, Some(fit.coefficient_names))
                }
                Err(e) => {
                    let cell = SweepCell {
                        delta,
                        theta_hat: None,
                        ci: None,
                        ess_min: None,
                        connecting: vec![None; axes.len()],
                        error: Some(e.to_string()),
                    };
                    (cell, None)
                }
            }
        })
        .collect();

    let coefficient_names = match cells.iter().find_map(|(_, n)| n.clone()) {
        Some(n) => n,
        None => {
            let first = cells[0].0.error.clone().unwrap_or_default();
            return Err(Error::Degenerate(format!("every sweep cell failed; first failure: {first}")));
        }
    };
    Ok(SweepResult {
        k: spec.k(),
        axes: axes.to_vec(),
        connecting_labels: connecting.iter().map(Connecting::label).collect(),
        coefficient_names,
        cells: cells.into_iter().map(|(c, _)| c).collect(),
    })
}

/// Vary δ_k alone (1-based `k`), all other entries at 0.
pub fn conditional_sweep(
    table: &ColumnTable,
    spec: &ModularizationSpec,
    k: usize,
    grid: &[f64],
    m: usize,
    seed: u64,
    options: &SweepOptions,
) -> Result<SweepResult> {
    grid_sweep(table, spec, &[SweepAxis { mechanism: k, grid: grid.to_vec() }], m, seed, options)
}

/// Vary δ_j and δ_k jointly (1-based), all other entries at 0.
#[allow(clippy::too_many_arguments)]
pub fn two_way_sweep(
    table: &ColumnTable,
    spec: &ModularizationSpec,
    j: usize,
    k: usize,
    grid_j: &[f64],
    grid_k: &[f64],
    m: usize,
    seed: u64,
    options: &SweepOptions,
) -> Result<SweepResult> {
    if j == k {
        return Err(Error::Invalid("a two-way sweep needs two different mechanisms".into()));
    }
    let axes = [
        SweepAxis { mechanism: j, grid: grid_j.to_vec() },
        SweepAxis { mechanism: k, grid: grid_k.to_vec() },
    ];
    grid_sweep(table, spec, &axes, m, seed, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids_have_expected_sizes() {
        let g = grid(-2.0, 2.0, 0.1).unwrap();
        assert_eq!(g.len(), 41);
        assert!(g.contains(&0.0) && g.contains(&-0.4) && g.contains(&0.5));
        assert_eq!(grid(-6.0, 6.0, 0.3).unwrap().len(), 41);
        assert_eq!(parse_grid("-1:1:0.5").unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1").is_err());
    }

    #[test]
    fn zero_is_positive_zero() {
        let g = grid(-0.3, 0.3, 0.1).unwrap();
        assert_eq!(g[3].to_bits(), 0.0f64.to_bits());
    }
}
