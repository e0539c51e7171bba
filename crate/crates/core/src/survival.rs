//! Cox proportional hazards with Breslow ties, and the enrollment weights
//! derived from it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_solve, symmetrize};

const LOGLIK_TOLERANCE: f64 = 1e-10;
const SCORE_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 50;
const DIVERGENCE_BOUND: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Distinct event times, ascending.
    pub event_times: Vec<f64>,
    /// Baseline survival (covariates at zero) just after each event time.
    pub baseline_survival: Vec<f64>,
    pub max_time: f64,
    pub iterations: usize,
}

impl CoxFit {
    /// Ŝ₀(t): right-continuous step function with Ŝ₀(t) = 1 before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e <= t);
        if k == 0 {
            1.0
        } else {
            self.baseline_survival[k - 1]
        }
    }

    pub fn linear_predictor(&self, x_row: &[f64]) -> f64 {
        x_row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn cumulative_hazard_at(&self, t: f64) -> f64 {
        -self.survival_at(t).ln()
    }
}

struct Pass {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

/// Risk-set sums walked from the latest time backwards. `order` sorts rows by
/// descending time.
fn pass(x: &DMatrix<f64>, time: &[f64], event: &[bool], order: &[usize], beta: &DVector<f64>, derivs: bool) -> Pass {
    let p = x.ncols();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut i = 0;
    while i < order.len() {
        let t = time[order[i]];
        let mut j = i;
        let mut d = 0.0;
        let mut xsum = DVector::zeros(p);
        let mut eta_sum = 0.0;
        while j < order.len() && time[order[j]] == t {
            let r = order[j];
            let xr = x.row(r).transpose();
            let eta = xr.dot(beta);
            let e = eta.exp();
            s0 += e;
            if derivs {
                s1 += &xr * e;
                s2 += &xr * xr.transpose() * e;
            }
            if event[r] {
                d += 1.0;
                eta_sum += eta;
                if derivs {
                    xsum += &xr;
                }
            }
            j += 1;
        }
        if d > 0.0 {
            loglik += eta_sum - d * s0.ln();
            if derivs {
                let mean = &s1 / s0;
                score += xsum - &mean * d;
                info += (&s2 / s0 - &mean * mean.transpose()) * d;
            }
        }
        i = j;
    }
    Pass { loglik, score, info: symmetrize(info) }
}

/// Newton-Raphson on the Breslow partial likelihood. Covariates are centered
/// internally; the reported baseline survival refers to covariates at zero.
pub fn fit_cox(x: &DMatrix<f64>, time: &[f64], event: &[bool]) -> Result<CoxFit> {
    let (n, p) = x.shape();
    if time.len() != n || event.len() != n {
        return Err(Error::Dimension(format!("{n} rows, {} times, {} event flags", time.len(), event.len())));
    }
    if let Some(i) = time.iter().position(|t| !t.is_finite() || *t <= 0.0) {
        return Err(Error::Invalid(format!("time {} at row {i} is not positive", time[i])));
    }
    if !event.iter().any(|e| *e) {
        return Err(Error::NoEvents);
    }
    if n < p {
        return Err(Error::Degenerate(format!("{n} rows for {p} coefficients")));
    }
    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    for (j, m) in means.iter().enumerate() {
        if x.column(j).iter().all(|v| v == m) {
            return Err(Error::ConstantCovariate(format!("#{j}")));
        }
    }
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));

    let mut beta = DVector::zeros(p);
    let mut state = pass(&xc, time, event, &order, &beta, true);
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    loop {
        let max_score = if p == 0 { 0.0 } else { state.score.amax() };
        if p == 0
            || (rel_change < LOGLIK_TOLERANCE
                && max_score < SCORE_TOLERANCE
                && crate::glm::small_step(&state.info, &state.score, &beta))
        {
            break;
        }
        if iterations >= MAX_ITERATIONS {
            if beta.amax() > DIVERGENCE_BOUND {
                return Err(Error::MonotoneLikelihood);
            }
            return Err(Error::NonConvergence { iterations, residual: max_score, last: beta.as_slice().to_vec() });
        }
        iterations += 1;
        let step = match spd_solve(&state.info, &state.score) {
            Some(s) => s,
            None if beta.amax() > DIVERGENCE_BOUND => return Err(Error::MonotoneLikelihood),
            None => {
                return Err(Error::SingularDesign {
                    columns: crate::linalg::collinear_columns(&xc, None).iter().map(|j| format!("#{j}")).collect(),
                })
            }
        };
        let mut scale = 1.0;
        let (cand, ll) = loop {
            let cand = &beta + &step * scale;
            let ll = pass(&xc, time, event, &order, &cand, false).loglik;
            if ll >= state.loglik - 1e-12 * state.loglik.abs() || scale < 1e-10 {
                break (cand, ll);
            }
            scale *= 0.5;
        };
        rel_change = (ll - state.loglik).abs() / (ll.abs() + 0.1);
        beta = cand;
        state = pass(&xc, time, event, &order, &beta, true);
    }

    let covariance = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        spd_inverse(&state.info).ok_or(Error::MonotoneLikelihood)?
    };

    // Breslow increments at the centered scale, then moved to x = 0.
    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
    let risk: Vec<f64> = by_time
        .iter()
        .map(|&r| xc.row(r).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let mut tail = vec![0.0; n + 1];
    for k in (0..n).rev() {
        tail[k] = tail[k + 1] + risk[k];
    }
    let shift = (-means.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>()).exp();
    let mut event_times = Vec::new();
    let mut baseline_survival = Vec::new();
    let mut hazard = 0.0;
    let mut k = 0;
    while k < n {
        let t = time[by_time[k]];
        let start = k;
        let mut d = 0.0;
        while k < n && time[by_time[k]] == t {
            if event[by_time[k]] {
                d += 1.0;
            }
            k += 1;
        }
        if d > 0.0 {
            hazard += d / tail[start];
            event_times.push(t);
            baseline_survival.push((-hazard * shift).exp());
        }
    }
    let max_time = time.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(CoxFit { coefficients: beta, covariance, event_times, baseline_survival, max_time, iterations })
}

/// Inverse of the predicted probability of remaining beyond `horizon`:
/// `1 / Ŝ₀(h)^{exp(x'α̂)}`.
pub fn enrollment_weight(fit: &CoxFit, x_row: &[f64], horizon: f64) -> Result<f64> {
    if x_row.len() != fit.coefficients.len() {
        return Err(Error::Dimension(format!(
            "{} covariates for {} coefficients",
            x_row.len(),
            fit.coefficients.len()
        )));
    }
    if !(0.0..=fit.max_time).contains(&horizon) {
        return Err(Error::HorizonOutOfRange { horizon, max_time: fit.max_time });
    }
    let s = (fit.linear_predictor(x_row).exp() * fit.survival_at(horizon).ln()).exp();
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::InfiniteWeight { horizon });
    }
    Ok(1.0 / s)
}
