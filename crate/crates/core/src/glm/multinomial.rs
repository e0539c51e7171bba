use nalgebra::{DMatrix, DVector};

use super::{
    check_weights, singular, small_step, Link, ModelFit, DEVIANCE_TOLERANCE, MAX_ITERATIONS, SCORE_TOLERANCE,
    SEPARATION_BOUND,
};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_solve, symmetrize};

/// Category probabilities from non-baseline linear predictors.
/// Returns probabilities for all `n_levels` levels, baseline included.
pub(crate) fn category_probs(etas: &[f64], baseline: usize, out: &mut Vec<f64>) {
    let m = etas.iter().fold(0.0f64, |a, &b| a.max(b));
    let denom = (-m).exp() + etas.iter().map(|e| (e - m).exp()).sum::<f64>();
    out.clear();
    let mut it = etas.iter();
    for j in 0..=etas.len() {
        if j == baseline {
            out.push((-m).exp() / denom);
        } else {
            out.push((it.next().expect("len") - m).exp() / denom);
        }
    }
}

struct State {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

fn evaluate(x: &DMatrix<f64>, y: &[usize], w: &[f64], beta: &DVector<f64>, baseline: usize, j: usize, with_derivs: bool) -> State {
    let (n, p) = x.shape();
    let q = (j - 1) * p;
    let mut score = DVector::zeros(q);
    let mut info = DMatrix::zeros(q, q);
    let mut loglik = 0.0;
    let mut etas = vec![0.0; j - 1];
    let mut probs = Vec::with_capacity(j);
    let mut xi = vec![0.0; p];
    for i in 0..n {
        for (c, slot) in xi.iter_mut().enumerate() {
            *slot = x[(i, c)];
        }
        for (b, e) in etas.iter_mut().enumerate() {
            *e = (0..p).map(|c| xi[c] * beta[b * p + c]).sum();
        }
        let m = etas.iter().fold(0.0f64, |a, &b| a.max(b));
        let lse = m + ((-m).exp() + etas.iter().map(|e| (e - m).exp()).sum::<f64>()).ln();
        let yb = block_of(y[i], baseline);
        let eta_y = yb.map_or(0.0, |b| etas[b]);
        loglik += w[i] * (eta_y - lse);
        if !with_derivs || w[i] == 0.0 {
            continue;
        }
        category_probs(&etas, baseline, &mut probs);
        let pb: Vec<f64> = (0..=etas.len()).filter(|&l| l != baseline).map(|l| probs[l]).collect();
        for a in 0..(j - 1) {
            let resid = if yb == Some(a) { 1.0 } else { 0.0 } - pb[a];
            for c in 0..p {
                score[a * p + c] += w[i] * xi[c] * resid;
            }
            for b in a..(j - 1) {
                let v = w[i] * pb[a] * (if a == b { 1.0 } else { 0.0 } - pb[b]);
                for c in 0..p {
                    for d in 0..p {
                        info[(a * p + c, b * p + d)] += v * xi[c] * xi[d];
                    }
                }
            }
        }
    }
    if with_derivs {
        for a in 0..(j - 1) {
            for b in 0..a {
                for c in 0..p {
                    for d in 0..p {
                        info[(a * p + c, b * p + d)] = info[(b * p + d, a * p + c)];
                    }
                }
            }
        }
    }
    State { loglik, score, info: symmetrize(info) }
}

fn block_of(level: usize, baseline: usize) -> Option<usize> {
    match level.cmp(&baseline) {
        std::cmp::Ordering::Less => Some(level),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(level - 1),
    }
}

/// Baseline-category multinomial logit. `y` holds level indices into `levels`.
pub fn fit_multinomial(x: &DMatrix<f64>, y: &[usize], levels: &[String], baseline: usize, w: &[f64]) -> Result<ModelFit> {
    let (n, p) = x.shape();
    let j = levels.len();
    if j < 2 || baseline >= j {
        return Err(Error::Invalid(format!("{j} levels with baseline index {baseline}")));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", y.len())));
    }
    check_weights(n, w)?;
    if let Some(i) = y.iter().position(|&v| v >= j) {
        return Err(Error::Invalid(format!("level index {} at row {i} out of range", y[i])));
    }
    let mut counts = vec![0.0; j];
    for (&yi, &wi) in y.iter().zip(w) {
        counts[yi] += wi;
    }
    if let Some(l) = counts.iter().position(|c| *c <= 0.0) {
        return Err(Error::EmptyLevel(levels[l].clone()));
    }
    let q = (j - 1) * p;
    if n < p {
        return Err(Error::Degenerate(format!("{n} rows for {p} coefficients per level")));
    }

    let mut beta = DVector::zeros(q);
    let mut state = evaluate(x, y, w, &beta, baseline, j, true);
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    loop {
        let max_score = state.score.amax();
        if rel_change < DEVIANCE_TOLERANCE && max_score < SCORE_TOLERANCE && small_step(&state.info, &state.score, &beta) {
            let covariance = spd_inverse(&state.info).ok_or_else(|| singular(x, w))?;
            return Ok(ModelFit {
                coefficients: beta,
                covariance,
                residual_variance: None,
                link: Link::MultinomialLogit { n_levels: j, baseline },
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
        let step = match spd_solve(&state.info, &state.score) {
            Some(s) => s,
            None if beta.amax() > SEPARATION_BOUND => return Err(give_up(beta, iterations, max_score)),
            None => return Err(singular(x, w)),
        };
        let mut scale = 1.0;
        let (new_beta, new_ll) = loop {
            let cand = &beta + &step * scale;
            let ll = evaluate(x, y, w, &cand, baseline, j, false).loglik;
            if ll >= state.loglik - 1e-12 * state.loglik.abs() || scale < 1e-10 {
                break (cand, ll);
            }
            scale *= 0.5;
        };
        // deviance = -2 loglik
        rel_change = 2.0 * (new_ll - state.loglik).abs() / (2.0 * new_ll.abs() + 0.1);
        beta = new_beta;
        state = evaluate(x, y, w, &beta, baseline, j, true);
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

    fn lv(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    #[test]
    fn intercept_only_log_relative_frequencies() {
        let mut y = vec![0; 5];
        y.extend([1; 3]);
        y.extend([2; 2]);
        let x = DMatrix::from_element(10, 1, 1.0);
        let f = fit_multinomial(&x, &y, &lv(3), 0, &[1.0; 10]).unwrap();
        assert!((f.coefficients[0] - (3.0f64 / 5.0).ln()).abs() < 1e-9);
        assert!((f.coefficients[1] - (2.0f64 / 5.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_level_is_named() {
        let x = DMatrix::from_element(3, 1, 1.0);
        match fit_multinomial(&x, &[0, 2, 2], &lv(3), 0, &[1.0; 3]) {
            Err(Error::EmptyLevel(l)) => assert_eq!(l, "L1"),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut out = Vec::new();
        category_probs(&[0.3, -2.0], 1, &mut out);
        assert_eq!(out.len(), 3);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((out[0] / out[1] - 0.3f64.exp()).abs() < 1e-12);
    }
}
