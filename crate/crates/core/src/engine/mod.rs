//! Blended analysis: sub-mechanisms processed in order, each by weighting or
//! by imputation, then a weighted least-squares analysis model per imputation.

mod spec;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{augment, fit_linear, fit_logistic, fit_multinomial, posterior_draw, ModelFit};
use crate::mnar::{impute_binary, impute_categorical, impute_continuous, solve_selection, SelectionSolution, SensitivityFunction};
use crate::rng::{stream, tag, StreamRng};
use crate::survival::{enrollment_weight, fit_cox};
use crate::tabular::{
    derive_indicators, design_matrix, response_vector, ColumnKind, ColumnTable, Formula, Overlay, SubMechanismIndicators,
    TableView,
};

pub use spec::{ImputationModel, Method, ModularizationSpec, SubMechanism};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Upper bound on each mechanism's inverse-probability weight. Off by default.
    #[serde(default)]
    pub weight_cap: Option<f64>,
    /// Drop every sensitivity function (δ is ignored).
    #[serde(default)]
    pub mar_only: bool,
    /// Keep the selection-model inputs of the first imputation, for
    /// connecting-quantity diagnostics.
    #[serde(default)]
    pub keep_selection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismDiagnostics {
    pub mechanism: usize,
    pub name: String,
    pub method: String,
    /// Subjects still in the analysis when the mechanism is processed.
    pub n_at_risk: usize,
    pub n_observed: usize,
    pub min_probability: Option<f64>,
    pub max_weight: Option<f64>,
    /// (Σw)²/Σw² over the mechanism's own weights.
    pub ess: Option<f64>,
    pub extreme_weights: bool,
    /// Per imputed variable: (name, cells imputed, mean imputed value).
    pub imputed: Vec<(String, usize, f64)>,
    /// Variables whose imputation model was separated and refit with
    /// pseudo-observations.
    pub augmented: Vec<String>,
}

/// Inputs and solution of one IPW selection model.
#[derive(Debug, Clone)]
pub struct SelectionDetail {
    pub mechanism: usize,
    /// Table rows of the design, in order.
    pub rows: Vec<usize>,
    pub x: DMatrix<f64>,
    pub r: Vec<bool>,
    pub solution: SelectionSolution,
}

#[derive(Debug, Clone)]
pub struct BlendedFit {
    pub coefficient_names: Vec<String>,
    /// θ̂ per imputation, `[l][j]`.
    pub theta_per_imputation: Vec<Vec<f64>>,
    pub theta_hat: Vec<f64>,
    pub delta: Vec<f64>,
    /// `[l][k]`.
    pub diagnostics: Vec<Vec<MechanismDiagnostics>>,
    /// ESS of the final product weights, per imputation.
    pub analysis_ess: Vec<f64>,
    pub analysis_n: usize,
    pub selection: Vec<SelectionDetail>,
}

impl BlendedFit {
    pub fn m(&self) -> usize {
        self.theta_per_imputation.len()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_names.iter().position(|n| n == name).map(|j| self.theta_hat[j])
    }

    /// Smallest analysis ESS over imputations.
    pub fn ess_min(&self) -> f64 {
        self.analysis_ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Imputed-value mean of `variable` averaged over imputations.
    pub fn mean_imputed(&self, variable: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .diagnostics
            .iter()
            .flat_map(|d| d.iter())
            .flat_map(|d| d.imputed.iter())
            .filter(|(v, n, _)| v == variable && *n > 0)
            .map(|(_, _, m)| *m)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Weighted least squares of the analysis model on `rows`.
pub fn fit_analysis(view: &dyn TableView, formula: &Formula, weights: &[f64], rows: &[usize]) -> Result<(Vec<String>, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::NoAnalysisRows);
    }
    if weights.len() != rows.len() {
        return Err(Error::Dimension(format!("{} weights for {} rows", weights.len(), rows.len())));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Invalid(format!("analysis weight {} for subject {} is not positive", weights[i], rows[i])));
    }
    let dm = design_matrix(view, formula, rows)?;
    let y = response_vector(view, formula, rows)?;
    let fit = fit_linear(&dm.x, &y, weights).map_err(|e| e.with_column_names(&dm.names))?;
    Ok((dm.names, fit.coefficients.as_slice().to_vec()))
}

#[derive(Clone)]
struct State<'a> {
    overlay: Overlay<'a>,
    active: Vec<bool>,
    weight: Vec<f64>,
    diagnostics: Vec<MechanismDiagnostics>,
    selection: Vec<SelectionDetail>,
}

struct Context<'a> {
    table: &'a ColumnTable,
    spec: &'a ModularizationSpec,
    ind: SubMechanismIndicators,
    delta: Vec<f64>,
    options: &'a EngineOptions,
}

/// Run the blended analysis with `m` imputations. Imputation `l` draws from
/// the stream derived from `(seed, l)`; mechanisms before the first MI step
/// involve no randomness and are computed once.
pub fn run_blended(
    table: &ColumnTable,
    spec: &ModularizationSpec,
    delta: &[f64],
    m: usize,
    seed: u64,
    options: &EngineOptions,
) -> Result<BlendedFit> {
    if m == 0 {
        return Err(Error::Invalid("M must be at least 1".into()));
    }
    spec.check_table(table)?;
    spec.check_delta(delta)?;
    let ind = derive_indicators(table, &spec.indicator_sources())?;
    let effective: Vec<f64> = if options.mar_only { vec![0.0; delta.len()] } else { delta.to_vec() };
    let ctx = Context { table, spec, ind, delta: effective, options };
    let n = table.n_rows();
    let first_mi = spec.sub_mechanisms.iter().position(|s| matches!(s.method, Method::Mi { .. }));

    let mut prefix = State {
        overlay: Overlay::new(table),
        active: vec![true; n],
        weight: vec![1.0; n],
        diagnostics: Vec::with_capacity(spec.k()),
        selection: Vec::new(),
    };
    let split = first_mi.unwrap_or(spec.k());
    for k in 0..split {
        step(&ctx, k, &mut prefix, None).map_err(|e| annotate(e, 0, k, spec))?;
    }

    let mut per: Vec<Replicate> = if first_mi.is_none() {
        vec![analysis(&ctx, prefix)?; m]
    } else {
        (0..m)
            .into_par_iter()
            .map(|l| {
                let mut rng = stream(seed, &[tag::IMPUTATION, l as u64]);
                let mut state = prefix.clone();
                if l > 0 {
                    state.selection.clear();
                }
                for k in split..spec.k() {
                    step(&ctx, k, &mut state, Some(&mut rng)).map_err(|e| annotate(e, l, k, spec))?;
                }
                analysis(&ctx, state)
            })
            .collect::<Vec<Result<Replicate>>>()
            // first failing imputation by index, not by finishing order
            .into_iter()
            .collect::<Result<Vec<_>>>()?
    };

    let p = per[0].theta.len();
    let theta_per_imputation: Vec<Vec<f64>> = per.iter().map(|r| r.theta.clone()).collect();
    let theta_hat = (0..p)
        .map(|j| crate::compensated_sum(theta_per_imputation.iter().map(|t| t[j])) / m as f64)
        .collect();
    let selection = if options.keep_selection { std::mem::take(&mut per[0].selection) } else { Vec::new() };
    Ok(BlendedFit {
        coefficient_names: per[0].names.clone(),
        theta_per_imputation,
        theta_hat,
        delta: delta.to_vec(),
        analysis_ess: per.iter().map(|r| r.ess).collect(),
        analysis_n: per[0].n,
        diagnostics: per.into_iter().map(|r| r.diagnostics).collect(),
        selection,
    })
}

fn annotate(e: Error, l: usize, k: usize, spec: &ModularizationSpec) -> Error {
    Error::Engine { imputation: l + 1, mechanism: k + 1, name: spec.sub_mechanisms[k].name.clone(), source: Box::new(e) }
}

fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

#[derive(Clone)]
struct Replicate {
    names: Vec<String>,
    theta: Vec<f64>,
    diagnostics: Vec<MechanismDiagnostics>,
    ess: f64,
    n: usize,
    selection: Vec<SelectionDetail>,
}

fn analysis(ctx: &Context, state: State) -> Result<Replicate> {
    let rows: Vec<usize> = (0..ctx.table.n_rows()).filter(|&i| state.active[i]).collect();
    let w: Vec<f64> = rows.iter().map(|&i| state.weight[i]).collect();
    let (names, theta) = fit_analysis(&state.overlay, &ctx.spec.analysis, &w, &rows)?;
    Ok(Replicate { names, theta, diagnostics: state.diagnostics, ess: ess(&w), n: rows.len(), selection: state.selection })
}

fn step(ctx: &Context, k: usize, state: &mut State, rng: Option<&mut StreamRng>) -> Result<()> {
    let mech = &ctx.spec.sub_mechanisms[k];
    let rows: Vec<usize> = (0..ctx.table.n_rows()).filter(|&i| state.active[i]).collect();
    let r: Vec<bool> = rows.iter().map(|&i| ctx.ind.r[k][i]).collect();
    let n_observed = r.iter().filter(|b| **b).count();
    let mut diag = MechanismDiagnostics {
        mechanism: k + 1,
        name: mech.name.clone(),
        method: mech.method.label().into(),
        n_at_risk: rows.len(),
        n_observed,
        min_probability: None,
        max_weight: None,
        ess: None,
        extreme_weights: false,
        imputed: Vec::new(),
        augmented: Vec::new(),
    };
    let cap = ctx.options.weight_cap.unwrap_or(f64::INFINITY);
    match &mech.method {
        Method::Ipw { model, .. } => {
            if n_observed == 0 {
                return Err(Error::Degenerate("no subject at risk has R = 1".into()));
            }
            let mut w = vec![1.0; rows.len()];
            if n_observed < rows.len() {
                let dm = design_matrix(&state.overlay, model, &rows)?;
                let xi = offsets(ctx, k, &state.overlay, &rows, &r)?;
                let sol = solve_selection(&dm.x, &r, &xi).map_err(|e| e.with_column_names(&dm.names))?;
                for (j, wj) in w.iter_mut().enumerate() {
                    *wj = if r[j] { sol.weights[j].min(cap) } else { 0.0 };
                }
                diag.min_probability = Some(sol.min_probability);
                diag.max_weight = Some(sol.max_weight);
                diag.extreme_weights = sol.extreme_weights;
                if ctx.options.keep_selection {
                    state.selection.push(SelectionDetail { mechanism: k + 1, rows: rows.clone(), x: dm.x, r: r.clone(), solution: sol });
                }
            } else {
                diag.min_probability = Some(1.0);
                diag.max_weight = Some(1.0);
            }
            apply_weights(state, &rows, &r, &w, &mut diag);
        }
        Method::CoxIpw { model, horizon, time, event } => {
            if n_observed == 0 {
                return Err(Error::Degenerate("no subject at risk has R = 1".into()));
            }
            let f = model.without_intercept();
            let dm = design_matrix(&state.overlay, &f, &rows)?;
            let tcol = state.overlay.require(time)?;
            let ecol = state.overlay.require(event)?;
            let mut t = Vec::with_capacity(rows.len());
            let mut e = Vec::with_capacity(rows.len());
            for &i in &rows {
                t.push(tcol.get(i).ok_or_else(|| Error::MissingValue { row: i, column: time.clone() })?);
                e.push(ecol.get(i).ok_or_else(|| Error::MissingValue { row: i, column: event.clone() })? == 1.0);
            }
            let fit = fit_cox(&dm.x, &t, &e).map_err(|err| match err {
                Error::ConstantCovariate(c) => Error::ConstantCovariate(
                    c.strip_prefix('#').and_then(|j| j.parse::<usize>().ok()).map_or(c.clone(), |j| dm.names[j].clone()),
                ),
                other => other.with_column_names(&dm.names),
            })?;
            let mut w = vec![0.0; rows.len()];
            let mut min_p = 1.0f64;
            for (j, wj) in w.iter_mut().enumerate() {
                if r[j] {
                    let x_row: Vec<f64> = dm.x.row(j).iter().copied().collect();
                    let raw = enrollment_weight(&fit, &x_row, *horizon)?;
                    min_p = min_p.min(1.0 / raw);
                    *wj = raw.min(cap);
                }
            }
            diag.min_probability = Some(min_p);
            diag.max_weight = Some(w.iter().copied().fold(0.0, f64::max));
            diag.extreme_weights = min_p < crate::mnar::PI_FLOOR;
            apply_weights(state, &rows, &r, &w, &mut diag);
        }
        Method::Mi { imputation } => {
            let rng = rng.expect("imputation steps get a stream");
            let delta = ctx.delta[k];
            for im in imputation {
                let (count, mean, augmented) = impute_variable(ctx, im, &rows, &r, delta, state, rng)?;
                diag.imputed.push((im.variable.clone(), count, mean));
                if augmented {
                    diag.augmented.push(im.variable.clone());
                }
            }
        }
    }
    state.diagnostics.push(diag);
    Ok(())
}

fn apply_weights(state: &mut State, rows: &[usize], r: &[bool], w: &[f64], diag: &mut MechanismDiagnostics) {
    let kept: Vec<f64> = w.iter().zip(r).filter(|(_, b)| **b).map(|(v, _)| *v).collect();
    diag.ess = Some(ess(&kept));
    for (j, &i) in rows.iter().enumerate() {
        if r[j] {
            state.weight[i] *= w[j];
        } else {
            state.active[i] = false;
        }
    }
}

/// ξ on R = 1 rows; zero elsewhere and whenever δ = 0.
fn offsets(ctx: &Context, k: usize, view: &dyn TableView, rows: &[usize], r: &[bool]) -> Result<Vec<f64>> {
    let delta = ctx.delta[k];
    let terms = match ctx.spec.sub_mechanisms[k].sensitivity() {
        Some(SensitivityFunction::IpwLinear { terms }) if delta != 0.0 => terms,
        _ => return Ok(vec![0.0; rows.len()]),
    };
    let cols = terms.iter().map(|t| view.require(&t.column)).collect::<Result<Vec<_>>>()?;
    let scales: Vec<f64> = terms.iter().map(|t| t.scale).collect();
    let mut xi = vec![0.0; rows.len()];
    let mut vals = vec![0.0; terms.len()];
    for (j, &i) in rows.iter().enumerate() {
        if !r[j] {
            continue;
        }
        for (v, (c, t)) in vals.iter_mut().zip(cols.iter().zip(&terms)) {
            *v = c.get(i).ok_or_else(|| Error::MissingValue { row: i, column: t.column.clone() })?;
        }
        xi[j] = SensitivityFunction::ipw_offset(&vals, &scales, delta);
    }
    Ok(xi)
}

fn impute_variable(
    ctx: &Context,
    im: &ImputationModel,
    rows: &[usize],
    r: &[bool],
    delta: f64,
    state: &mut State,
    rng: &mut StreamRng,
) -> Result<(usize, f64, bool)> {
    let kind = ctx.table.require(&im.variable)?.kind().clone();
    let mut augmented = false;
    let nf = im.formulas.len();
    let mut train: Vec<Vec<usize>> = vec![Vec::new(); nf];
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); nf];
    {
        let view = &state.overlay;
        let col = view.require(&im.variable)?;
        for (j, &i) in rows.iter().enumerate() {
            let missing = !r[j] && col.get(i).is_none();
            if r[j] || missing {
                let mut chosen = None;
                for (f, formula) in im.formulas.iter().enumerate() {
                    if formula.predictors_available(view, i)? {
                        chosen = Some(f);
                        break;
                    }
                }
                match (chosen, r[j]) {
                    (Some(f), true) => train[f].push(i),
                    (Some(f), false) => targets[f].push(i),
                    (None, true) => {}
                    (None, false) => {
                        let f = im.formulas.last().expect("validated");
                        let c = f
                            .predictors()
                            .into_iter()
                            .find(|c| view.column(c).is_some_and(|col| col.get(i).is_none()))
                            .unwrap_or_default();
                        return Err(Error::MissingValue { row: i, column: c.to_string() });
                    }
                }
            }
        }
    }
    let mut count = 0;
    let mut total = 0.0;
    for f in 0..nf {
        if targets[f].is_empty() {
            continue;
        }
        let formula = &im.formulas[f];
        if train[f].is_empty() {
            return Err(Error::Degenerate(format!("no training rows for `{formula}`")));
        }
        let dtrain = design_matrix(&state.overlay, formula, &train[f])?;
        let y = response_vector(&state.overlay, formula, &train[f])?;
        let unit = vec![1.0; y.len()];
        let discrete = |x: &DMatrix<f64>, y: &[f64], w: &[f64]| -> Result<ModelFit> {
            match &kind {
                ColumnKind::Categorical { levels, .. } => {
                    let yi: Vec<usize> = y.iter().map(|v| *v as usize).collect();
                    fit_multinomial(x, &yi, levels, kind.baseline_index().expect("validated"), w)
                }
                _ => fit_logistic(x, y, w),
            }
        };
        let fit = match &kind {
            ColumnKind::Continuous => fit_linear(&dtrain.x, &y, &unit),
            _ => match discrete(&dtrain.x, &y, &unit) {
                Err(Error::Separation { .. } | Error::NonConvergence { .. }) => {
                    let n_levels = kind.levels().len().max(2);
                    let (xa, ya, wa) = augment(&dtrain.x, &y, &unit, n_levels);
                    augmented = true;
                    discrete(&xa, &ya, &wa)
                }
                other => other,
            },
        }
        .map_err(|e| e.with_column_names(&dtrain.names))?;
        let draw = posterior_draw(&fit, rng)?;
        let dtarget = design_matrix(&state.overlay, formula, &targets[f])?;
        let values = match &kind {
            ColumnKind::Continuous => impute_continuous(&draw, &dtarget.x, delta, rng)?,
            ColumnKind::Binary => impute_binary(&draw, &dtarget.x, delta, rng)?,
            ColumnKind::Categorical { .. } => impute_categorical(&draw, &dtarget.x, delta, rng)?,
        };
        for (&i, &v) in targets[f].iter().zip(&values) {
            state.overlay.impute(&im.variable, i, v)?;
            total += v;
        }
        count += values.len();
    }
    Ok((count, if count > 0 { total / count as f64 } else { f64::NAN }, augmented))
}
