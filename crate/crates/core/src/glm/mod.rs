//! Weighted maximum-likelihood fits for the three model families used by the
//! selection, imputation, and analysis steps, plus approximate-posterior
//! parameter draws.

mod augment;
mod linear;
mod logistic;
mod multinomial;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

pub use augment::augment;
pub use linear::fit_linear;
pub use logistic::fit_logistic;
pub use multinomial::fit_multinomial;
pub(crate) use multinomial::category_probs;

/// IRLS / Newton stopping rule: relative deviance change below this...
pub const DEVIANCE_TOLERANCE: f64 = 1e-10;
/// ...and the score below this (max-norm).
pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 50;
/// ...and the next Newton step below this, relative to the coefficients.
pub const STEP_TOLERANCE: f64 = 1e-6;
/// Any |coefficient| beyond this on a non-converged fit is reported as separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Link {
    Identity,
    Logit,
    /// Baseline-category logits: one coefficient block per non-baseline level,
    /// blocks ordered by level index.
    MultinomialLogit { n_levels: usize, baseline: usize },
}

#[derive(Debug, Clone)]
pub struct ModelFit {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Weighted RSS / (n - p); linear fits only.
    pub residual_variance: Option<f64>,
    pub link: Link,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    /// Columns of the design matrix (per block for multinomial fits).
    pub n_predictors: usize,
}

impl ModelFit {
    pub fn df_residual(&self) -> usize {
        self.n_obs.saturating_sub(self.coefficients.len())
    }

    /// Coefficient block of non-baseline level `level` (multinomial) or the
    /// whole vector otherwise.
    pub fn block(&self, level: usize) -> DVector<f64> {
        match self.link {
            Link::MultinomialLogit { baseline, .. } => {
                assert_ne!(level, baseline, "baseline level has no coefficient block");
                let b = if level > baseline { level - 1 } else { level };
                self.coefficients.rows(b * self.n_predictors, self.n_predictors).into_owned()
            }
            _ => self.coefficients.clone(),
        }
    }
}

/// One draw of the model parameters from their approximate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDraw {
    pub coefficients: DVector<f64>,
    /// Residual standard deviation; linear models only.
    pub residual_sd: Option<f64>,
    pub link: Link,
    pub n_predictors: usize,
}

impl ParameterDraw {
    /// A draw pinned at given values (no posterior uncertainty).
    pub fn fixed(coefficients: Vec<f64>, residual_sd: Option<f64>, link: Link) -> Self {
        let n_predictors = match link {
            Link::MultinomialLogit { n_levels, .. } => coefficients.len() / (n_levels - 1),
            _ => coefficients.len(),
        };
        ParameterDraw { coefficients: DVector::from_vec(coefficients), residual_sd, link, n_predictors }
    }
}

/// Normal draw around the MLE with the inverse-information covariance; for
/// linear fits the residual variance is drawn as σ̂²(n−p)/χ²_{n−p}.
pub fn posterior_draw<R: Rng + ?Sized>(fit: &ModelFit, rng: &mut R) -> Result<ParameterDraw> {
    if !fit.converged {
        return Err(Error::Invalid("posterior draw from a non-converged fit".into()));
    }
    let q = fit.coefficients.len();
    let factor = covariance_factor(&fit.covariance)?;
    let residual_sd = match fit.residual_variance {
        Some(s2) => {
            let df = fit.df_residual();
            if df == 0 || s2 == 0.0 {
                Some(0.0)
            } else {
                let chi: f64 = ChiSquared::new(df as f64)
                    .map_err(|e| Error::Invalid(e.to_string()))?
                    .sample(rng);
                Some((s2 * df as f64 / chi).sqrt())
            }
        }
        None => None,
    };
    let z = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let coefficients = &fit.coefficients + factor * z;
    Ok(ParameterDraw { coefficients, residual_sd, link: fit.link.clone(), n_predictors: fit.n_predictors })
}

/// Matrix `L` with `L L' = cov`: Cholesky when possible, otherwise a
/// clipped eigen-decomposition for singular but PSD matrices.
fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPsdCovariance);
    }
    let cov = symmetrize(cov.clone());
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = cov.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-8 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::NonPsdCovariance);
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// The Newton step from `beta` is negligible.
pub(crate) fn small_step(info: &DMatrix<f64>, score: &DVector<f64>, beta: &DVector<f64>) -> bool {
    match crate::linalg::spd_solve(info, score) {
        Some(step) => step.amax() < STEP_TOLERANCE * (1.0 + beta.amax()),
        None => false,
    }
}

pub(crate) fn check_weights(n: usize, w: &[f64]) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension(format!("{} weights for {n} rows", w.len())));
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid(format!("weight {} at row {i} is not a finite nonnegative number", w[i])));
    }
    Ok(())
}

pub(crate) fn singular(x: &DMatrix<f64>, w: &[f64]) -> Error {
    let mut cols: Vec<String> = crate::linalg::collinear_columns(x, Some(w))
        .into_iter()
        .map(|j| format!("#{j}"))
        .collect();
    if cols.is_empty() {
        cols.push("(ill-conditioned)".into());
    }
    Error::SingularDesign { columns: cols }
}

impl Error {
    /// Replace `#j` column references with design-matrix column names.
    pub fn with_column_names(self, names: &[String]) -> Error {
        match self {
            Error::SingularDesign { columns } => Error::SingularDesign {
                columns: columns
                    .into_iter()
                    .map(|c| {
                        c.strip_prefix('#')
                            .and_then(|j| j.parse::<usize>().ok())
                            .and_then(|j| names.get(j).cloned())
                            .unwrap_or(c)
                    })
                    .collect(),
            },
            other => other,
        }
    }
}
