use nalgebra::{DMatrix, DVector};

use super::{
    check_weights, singular, small_step, Link, ModelFit, DEVIANCE_TOLERANCE, MAX_ITERATIONS, SCORE_TOLERANCE,
    SEPARATION_BOUND,
};
use crate::error::{Error, Result};
use crate::linalg::{expit, mat_vec, spd_inverse, spd_solve, weighted_gram, xt_vec};

/// log(1 + e^x) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn deviance(eta: &[f64], y: &[f64], w: &[f64]) -> f64 {
    2.0 * eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * (softplus(e) - yi * e))
        .sum::<f64>()
}

/// Logistic regression by Newton-Raphson (IRLS) with step halving.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<ModelFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", y.len())));
    }
    check_weights(n, w)?;
    if let Some(i) = y.iter().position(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Invalid(format!("response {} at row {i} is not binary", y[i])));
    }
    if n < p {
        return Err(Error::Degenerate(format!("{n} rows for {p} coefficients")));
    }

    let mut beta = DVector::zeros(p);
    let mut eta = vec![0.0; n];
    let mut dev = deviance(&eta, y, w);
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    loop {
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let resid: Vec<f64> = y.iter().zip(&mu).zip(w).map(|((yi, m), wi)| wi * (yi - m)).collect();
        let score = xt_vec(x, &resid);
        let max_score = score.amax();
        let iw: Vec<f64> = mu.iter().zip(w).map(|(m, wi)| wi * m * (1.0 - m)).collect();
        let info = weighted_gram(x, &iw);

        // under separation the deviance and score flatten out while the
        // Newton step stays large
        if rel_change < DEVIANCE_TOLERANCE && max_score < SCORE_TOLERANCE && small_step(&info, &score, &beta) {
            let covariance = spd_inverse(&info).ok_or_else(|| singular(x, w))?;
            return Ok(ModelFit {
                coefficients: beta,
                covariance,
                residual_variance: None,
                link: Link::Logit,
                converged: true,
                iterations,
                n_obs: n,
                n_predictors: p,
            });
        }
        if iterations >= MAX_ITERATIONS {
            return Err(give_up(beta, iterations, max_score));
        }
        iterations += 1;

        let step = match spd_solve(&info, &score) {
            Some(s) => s,
            None if beta.amax() > SEPARATION_BOUND => return Err(give_up(beta, iterations, max_score)),
            None => return Err(singular(x, w)),
        };
        let mut scale = 1.0;
        let (new_beta, new_eta, new_dev) = loop {
            let cand = &beta + &step * scale;
            let cand_eta = mat_vec(x, cand.as_slice());
            let cand_dev = deviance(&cand_eta, y, w);
            if cand_dev <= dev + 1e-12 * dev.abs() || scale < 1e-10 {
                break (cand, cand_eta, cand_dev);
            }
            scale *= 0.5;
        };
        rel_change = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        beta = new_beta;
        eta = new_eta;
        dev = new_dev;
    }
}

fn give_up(beta: DVector<f64>, iterations: usize, residual: f64) -> Error {
    let (index, value) = beta
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv.abs() { (i, *v) } else { (bi, bv) });
    if value.abs() > SEPARATION_BOUND {
        Error::Separation { index, value }
    } else {
        Error::NonConvergence { iterations, residual, last: beta.as_slice().to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_is_logit_of_mean() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let f = fit_logistic(&x, &[0.0, 1.0, 0.0, 1.0], &[1.0; 4]).unwrap();
        assert!(f.coefficients[0].abs() < 1e-12);
        let f = fit_logistic(&x, &[1.0, 1.0, 0.0, 1.0], &[1.0; 4]).unwrap();
        assert!((f.coefficients[0] - 3f64.ln()).abs() < 1e-10);
        // Var(logit p̂) = 1 / (n p (1-p))
        assert!((f.covariance[(0, 0)] - 1.0 / (4.0 * 0.75 * 0.25)).abs() < 1e-9);
    }

    #[test]
    fn complete_separation_is_reported() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert!(matches!(fit_logistic(&x, &y, &[1.0; 6]), Err(Error::Separation { .. })));
    }

    #[test]
    fn non_binary_response_is_rejected() {
        let x = DMatrix::from_element(2, 1, 1.0);
        assert!(fit_logistic(&x, &[0.0, 0.5], &[1.0; 2]).is_err());
    }
}
