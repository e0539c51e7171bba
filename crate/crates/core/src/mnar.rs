//! Delta adjustment: offset selection models for weighted mechanisms and
//! shifted imputation draws for imputed ones.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{category_probs, Link, ParameterDraw};
use crate::linalg::{expit, spd_solve, weighted_gram};

pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// A Newton run that stalls below this residual is still accepted.
pub const ACCEPT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
/// Fitted probabilities below this raise the extreme-weight flag.
pub const PI_FLOOR: f64 = 1e-4;

/// How δ enters a mechanism's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensitivityFunction {
    /// ξ(D; δ) = δ Σ_j D_j / s_j over the listed variables.
    IpwLinear { terms: Vec<ScaledVariable> },
    /// ξ(R; δ) = δ (1 − R).
    MiShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledVariable {
    pub column: String,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SensitivityFunction {
    pub fn ipw(column: &str, scale: f64) -> Self {
        SensitivityFunction::IpwLinear { terms: vec![ScaledVariable { column: column.into(), scale }] }
    }

    /// ξ for one subject given the values of the sensitivity variables.
    pub fn ipw_offset(values: &[f64], scales: &[f64], delta: f64) -> f64 {
        if delta == 0.0 {
            return 0.0;
        }
        delta * values.iter().zip(scales).map(|(v, s)| v / s).sum::<f64>()
    }

    /// ξ(R; δ) for an imputation mechanism.
    pub fn mi_offset(observed: bool, delta: f64) -> f64 {
        if observed {
            0.0
        } else {
            delta
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionSolution {
    pub coefficients: DVector<f64>,
    /// π̂ on every row; meaningful for R = 1 rows only.
    pub probabilities: Vec<f64>,
    /// 1/π̂ for R = 1 rows, 0 for R = 0 rows.
    pub weights: Vec<f64>,
    /// max-norm of the estimating function divided by the number of rows.
    pub residual_norm: f64,
    pub iterations: usize,
    pub min_probability: f64,
    pub max_weight: f64,
    pub extreme_weights: bool,
}

/// Σ x (R/π − 1) with π = expit(x'ψ + ξ), evaluated on R = 1 rows only
/// for the ξ term.
pub fn estimating_function(x: &DMatrix<f64>, r: &[bool], xi: &[f64], psi: &DVector<f64>) -> DVector<f64> {
    let (n, p) = x.shape();
    let mut u = DVector::zeros(p);
    for i in 0..n {
        let eta: f64 = (0..p).map(|j| x[(i, j)] * psi[j]).sum();
        // R/π − 1 = R(1 + e^{−η}) − 1
        let c = if r[i] { (-(eta + xi[i])).exp() } else { -1.0 };
        for j in 0..p {
            u[j] += x[(i, j)] * c;
        }
    }
    u
}

/// Concave objective whose gradient is the estimating function.
fn objective(x: &DMatrix<f64>, r: &[bool], xi: &[f64], psi: &DVector<f64>) -> f64 {
    let lp = x * psi;
    (0..x.nrows())
        .map(|i| if r[i] { -(-(lp[i] + xi[i])).exp() } else { -lp[i] })
        .sum()
}

/// Solve Σ x (R/π(ψ) − 1) = 0 for the δ-offset logistic selection model.
///
/// `x` holds the rows at risk for the mechanism; `xi` is the offset ξ for
/// R = 1 rows and is ignored elsewhere.
pub fn solve_selection(x: &DMatrix<f64>, r: &[bool], xi: &[f64]) -> Result<SelectionSolution> {
    let (n, p) = x.shape();
    if r.len() != n || xi.len() != n {
        return Err(Error::Dimension(format!("{n} rows, {} indicators, {} offsets", r.len(), xi.len())));
    }
    let n1 = r.iter().filter(|b| **b).count();
    if n1 == 0 {
        return Err(Error::Degenerate("no observed rows for the selection model".into()));
    }
    if n1 == n {
        return Err(Error::Degenerate("no unobserved rows; selection probabilities are all one".into()));
    }
    if let Some(i) = (0..n).find(|&i| r[i] && !xi[i].is_finite()) {
        return Err(Error::Invalid(format!("offset at row {i} is not finite")));
    }
    let xi: Vec<f64> = (0..n).map(|i| if r[i] { xi[i] } else { 0.0 }).collect();

    let mut psi = DVector::zeros(p);
    let mut u = estimating_function(x, r, &xi, &psi);
    let mut q = objective(x, r, &xi, &psi);
    let mut iterations = 0;
    loop {
        let resid = u.amax() / n as f64;
        if resid < RESIDUAL_TOLERANCE {
            break;
        }
        if iterations >= MAX_ITERATIONS {
            if resid <= ACCEPT_TOLERANCE {
                break;
            }
            return Err(Error::NonConvergence { iterations, residual: resid, last: psi.as_slice().to_vec() });
        }
        iterations += 1;
        let lp = x * &psi;
        let h: Vec<f64> = (0..n).map(|i| if r[i] { (-(lp[i] + xi[i])).exp() } else { 0.0 }).collect();
        let info = weighted_gram(x, &h);
        let step = spd_solve(&info, &u).ok_or_else(|| {
            let w: Vec<f64> = r.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
            crate::glm::singular(x, &w)
        })?;
        let mut scale = 1.0;
        let mut accepted = None;
        while scale >= 1e-10 {
            let cand = &psi + &step * scale;
            let qc = objective(x, r, &xi, &cand);
            if qc.is_finite() && qc >= q - 1e-14 * q.abs() {
                accepted = Some((cand, qc));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, qc)) => {
                psi = cand;
                q = qc;
                u = estimating_function(x, r, &xi, &psi);
            }
            // stalled at rounding level
            None => {
                let resid = u.amax() / n as f64;
                if resid <= ACCEPT_TOLERANCE {
                    break;
                }
                return Err(Error::NonConvergence { iterations, residual: resid, last: psi.as_slice().to_vec() });
            }
        }
    }

    let lp = x * &psi;
    let mut probabilities = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut min_probability = 1.0f64;
    let mut max_weight = 0.0f64;
    for i in 0..n {
        let pi = expit(lp[i] + xi[i]);
        probabilities[i] = pi;
        if r[i] {
            if pi <= 0.0 || !(1.0 / pi).is_finite() {
                return Err(Error::NonPositiveProbability { row: i });
            }
            weights[i] = 1.0 / pi;
            min_probability = min_probability.min(pi);
            max_weight = max_weight.max(weights[i]);
        }
    }
    Ok(SelectionSolution {
        coefficients: psi,
        probabilities,
        weights,
        residual_norm: u.amax() / n as f64,
        iterations,
        min_probability,
        max_weight,
        extreme_weights: min_probability < PI_FLOOR,
    })
}

fn linear_predictor(draw: &ParameterDraw, x: &DMatrix<f64>, i: usize, block: usize) -> f64 {
    let p = draw.n_predictors;
    (0..p).map(|j| x[(i, j)] * draw.coefficients[block * p + j]).sum()
}

fn check_dims(draw: &ParameterDraw, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != draw.n_predictors {
        return Err(Error::Dimension(format!(
            "{} design columns for a model with {} predictors",
            x.ncols(),
            draw.n_predictors
        )));
    }
    Ok(())
}

/// x'ψ* + σ* z + δ for each row of `x`.
pub fn impute_continuous<R: Rng + ?Sized>(draw: &ParameterDraw, x: &DMatrix<f64>, delta: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_dims(draw, x)?;
    let sd = draw.residual_sd.ok_or_else(|| Error::Invalid("continuous imputation needs a linear model".into()))?;
    Ok((0..x.nrows())
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            linear_predictor(draw, x, i, 0) + sd * z + delta
        })
        .collect())
}

/// Bernoulli(expit(x'ψ* + δ)) for each row of `x`.
pub fn impute_binary<R: Rng + ?Sized>(draw: &ParameterDraw, x: &DMatrix<f64>, delta: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_dims(draw, x)?;
    if draw.link != Link::Logit {
        return Err(Error::Invalid("binary imputation needs a logistic model".into()));
    }
    Ok((0..x.nrows())
        .map(|i| {
            let u: f64 = rng.random();
            if u < expit(linear_predictor(draw, x, i, 0) + delta) {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Draw a level index per row with every non-baseline logit shifted by δ.
///
/// One uniform per row; non-baseline levels are visited in index order and
/// the baseline takes the remaining mass, so J = 2 reproduces
/// [`impute_binary`] under the same stream.
pub fn impute_categorical<R: Rng + ?Sized>(draw: &ParameterDraw, x: &DMatrix<f64>, delta: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_dims(draw, x)?;
    let (n_levels, baseline) = match draw.link {
        Link::MultinomialLogit { n_levels, baseline } => (n_levels, baseline),
        _ => return Err(Error::Invalid("categorical imputation needs a multinomial model".into())),
    };
    let mut etas = vec![0.0; n_levels - 1];
    let mut probs = Vec::with_capacity(n_levels);
    Ok((0..x.nrows())
        .map(|i| {
            for (b, e) in etas.iter_mut().enumerate() {
                *e = linear_predictor(draw, x, i, b) + delta;
            }
            category_probs(&etas, baseline, &mut probs);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (level, p) in probs.iter().enumerate() {
                if level == baseline {
                    continue;
                }
                acc += p;
                if u < acc {
                    return level as f64;
                }
            }
            baseline as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn intercept_only_mar_forces_mean() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let r = [true, true, false, true];
        let s = solve_selection(&x, &r, &[0.0; 4]).unwrap();
        assert!((s.coefficients[0] - 3f64.ln()).abs() < 1e-10);
        assert!((s.weights[0] - 4.0 / 3.0).abs() < 1e-10);
        assert_eq!(s.weights[2], 0.0);
        assert!(s.residual_norm < 1e-10);
    }

    #[test]
    fn offsets_on_missing_rows_are_ignored() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let r = [true, true, false, true];
        let a = solve_selection(&x, &r, &[0.2, -0.1, 0.0, 0.4]).unwrap();
        let b = solve_selection(&x, &r, &[0.2, -0.1, f64::NAN, 0.4]).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn all_observed_is_degenerate() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(solve_selection(&x, &[true; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn binary_probability_saturates() {
        let draw = ParameterDraw::fixed(vec![0.0], None, Link::Logit);
        let x = DMatrix::from_element(10_000, 1, 1.0);
        let v = impute_binary(&draw, &x, -20.0, &mut stream(3, &[])).unwrap();
        assert!(v.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn two_level_categorical_matches_binary() {
        let x = DMatrix::from_fn(200, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 / 40.0).sin() });
        let bin = ParameterDraw::fixed(vec![0.3, -1.1], None, Link::Logit);
        let cat = ParameterDraw::fixed(vec![0.3, -1.1], None, Link::MultinomialLogit { n_levels: 2, baseline: 0 });
        let a = impute_binary(&bin, &x, 0.7, &mut stream(5, &[])).unwrap();
        let b = impute_categorical(&cat, &x, 0.7, &mut stream(5, &[])).unwrap();
        assert_eq!(a, b);
    }
}
