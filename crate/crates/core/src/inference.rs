//! Bootstrap-MI: the whole blended analysis re-run on subject-level
//! resamples of the raw table, with percentile intervals.

use rand::Rng;
use rayon::prelude::*;

use crate::engine::{run_blended, BlendedFit, EngineOptions, ModularizationSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, tag};
use crate::tabular::{ColumnTable, TableView};

/// Share of replicates allowed to fail before the whole bootstrap fails.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub point: BlendedFit,
    pub coefficient_names: Vec<String>,
    /// One row per successful replicate, in replicate order.
    pub replicate_estimates: Vec<Vec<f64>>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub b: usize,
    pub m: usize,
    pub alpha: f64,
    pub seed: u64,
    /// (replicate index, message) for each skipped replicate.
    pub failures: Vec<(usize, String)>,
}

impl BootstrapResult {
    /// Whether the interval for coefficient `j` excludes zero.
    pub fn significant(&self, j: usize) -> bool {
        self.ci_lower[j] > 0.0 || self.ci_upper[j] < 0.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coefficient_names.iter().position(|n| n == name)
    }
}

/// 1-based order statistic ⌈q⌉, clamped to [1, b].
fn order_index(q: f64, b: usize) -> usize {
    // guard against q = 5.000000000000001 style rounding
    let k = (q - 1e-9).ceil().max(1.0) as usize;
    k.min(b)
}

/// Percentile interval from order statistics ⌈B α/2⌉ and ⌈B (1 − α/2)⌉.
pub fn percentile_interval(values: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let b = v.len();
    let lo = order_index(b as f64 * alpha / 2.0, b);
    let hi = order_index(b as f64 * (1.0 - alpha / 2.0), b);
    (v[lo - 1], v[hi - 1])
}

/// Rows of one bootstrap resample.
pub fn resample_rows(n: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = stream(seed, &[tag::BOOTSTRAP_RESAMPLE, replicate as u64]);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn bootstrap_mi(
    table: &ColumnTable,
    spec: &ModularizationSpec,
    delta: &[f64],
    b: usize,
    m: usize,
    alpha: f64,
    seed: u64,
    options: &EngineOptions,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::Invalid("B must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let point = run_blended(table, spec, delta, m, seed, options)?;
    let n = table.n_rows();
    let light = EngineOptions { keep_selection: false, ..options.clone() };
    let outcomes: Vec<Result<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let sample = table.take_rows(&resample_rows(n, seed, r));
            let s = derive_seed(seed, &[tag::BOOTSTRAP_ANALYSIS, r as u64]);
            run_blended(&sample, spec, delta, m, s, &light).map(|f| f.theta_hat)
        })
        .collect();
    let mut replicate_estimates = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => replicate_estimates.push(t),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * b as f64 {
        return Err(Error::TooManyFailures { failed: failures.len(), total: b, first: failures[0].1.clone() });
    }
    let p = point.theta_hat.len();
    let mut ci_lower = Vec::with_capacity(p);
    let mut ci_upper = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = replicate_estimates.iter().map(|t| t[j]).collect();
        let (lo, hi) = percentile_interval(&col, alpha);
        ci_lower.push(lo);
        ci_upper.push(hi);
    }
    Ok(BootstrapResult {
        coefficient_names: point.coefficient_names.clone(),
        point,
        replicate_estimates,
        ci_lower,
        ci_upper,
        b,
        m,
        alpha,
        seed,
        failures,
    })
}
