//! Connecting quantities: what a δ value implies about the unobserved
//! values of an IPW mechanism's target variable.
//!
//! Both estimators assume the distribution of the covariates among R = 0
//! rows does not depend on δ.

use nalgebra::DMatrix;

use crate::engine::SelectionDetail;
use crate::error::{Error, Result};
use crate::glm::{fit_linear, fit_logistic};
use crate::linalg::expit;
use crate::tabular::TableView;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectingEstimate {
    pub value: f64,
    /// The raw estimate fell outside [0, 1] and was clipped.
    pub clipped: bool,
}

fn target_values(view: &dyn TableView, detail: &SelectionDetail, column: &str) -> Result<Vec<f64>> {
    let col = view.require(column)?;
    detail
        .rows
        .iter()
        .zip(&detail.r)
        .map(|(&i, &r)| {
            if r {
                col.get(i).ok_or_else(|| Error::MissingValue { row: i, column: column.to_string() })
            } else {
                Ok(f64::NAN)
            }
        })
        .collect()
}

fn n_missing(detail: &SelectionDetail) -> Result<usize> {
    let n0 = detail.r.iter().filter(|r| !**r).count();
    if n0 == 0 {
        return Err(Error::Degenerate("no R = 0 rows; the connecting quantity is undefined".into()));
    }
    Ok(n0)
}

fn linear_predictor(x: &DMatrix<f64>, i: usize, coef: &[f64]) -> f64 {
    x.row(i).iter().zip(coef).map(|(a, b)| a * b).sum()
}

/// P(R = 1 | x) from a logistic regression of R on the selection covariates.
fn response_probability(detail: &SelectionDetail) -> Result<Vec<f64>> {
    let r: Vec<f64> = detail.r.iter().map(|&b| f64::from(u8::from(b))).collect();
    let fit = fit_logistic(&detail.x, &r, &vec![1.0; r.len()])?;
    let coef = fit.coefficients.as_slice();
    Ok((0..r.len()).map(|i| expit(linear_predictor(&detail.x, i, coef))).collect())
}

/// P̂(V = 1 | R = 0, δ) for a binary target whose selection model carries the
/// offset δ·V/scale.
pub fn connecting_binary(
    view: &dyn TableView,
    detail: &SelectionDetail,
    column: &str,
    scale: f64,
    delta: f64,
) -> Result<ConnectingEstimate> {
    let n0 = n_missing(detail)?;
    let v = target_values(view, detail, column)?;
    let rv: Vec<f64> = v.iter().map(|x| if x.is_nan() { 0.0 } else { *x }).collect();
    let joint = fit_logistic(&detail.x, &rv, &vec![1.0; rv.len()])?;
    let p1 = response_probability(detail)?;
    let alpha = detail.solution.coefficients.as_slice();
    let jc = joint.coefficients.as_slice();
    let mut total = 0.0;
    for i in 0..detail.r.len() {
        if detail.r[i] {
            continue;
        }
        // odds of staying unobserved for a subject with V = 1
        let odds = (-linear_predictor(&detail.x, i, alpha) - delta / scale).exp();
        let p_joint = expit(linear_predictor(&detail.x, i, jc));
        total += odds * p_joint / (1.0 - p1[i]);
    }
    let raw = total / n0 as f64;
    let value = raw.clamp(0.0, 1.0);
    Ok(ConnectingEstimate { value, clipped: value != raw })
}

/// Ê(V | R = 0, δ) for a continuous target whose selection model carries the
/// offset δ·V/scale.
pub fn connecting_continuous(
    view: &dyn TableView,
    detail: &SelectionDetail,
    column: &str,
    scale: f64,
    delta: f64,
) -> Result<ConnectingEstimate> {
    let n0 = n_missing(detail)?;
    let v = target_values(view, detail, column)?;
    let p1 = response_probability(detail)?;
    let alpha = detail.solution.coefficients.as_slice();
    let observed: Vec<usize> = (0..detail.r.len()).filter(|&i| detail.r[i]).collect();
    let x1 = detail.x.select_rows(&observed);
    let t: Vec<f64> = observed
        .iter()
        .map(|&i| {
            let odds = (-linear_predictor(&detail.x, i, alpha) - delta * v[i] / scale).exp();
            v[i] * odds * p1[i] / (1.0 - p1[i])
        })
        .collect();
    let fit = fit_linear(&x1, &t, &vec![1.0; t.len()])?;
    let coef = fit.coefficients.as_slice();
    let total: f64 = (0..detail.r.len()).filter(|&i| !detail.r[i]).map(|i| linear_predictor(&detail.x, i, coef)).sum();
    Ok(ConnectingEstimate { value: total / n0 as f64, clipped: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnar::solve_selection;
    use crate::tabular::{Column, ColumnKind, ColumnTable};

    fn detail(r: &[bool], xi: &[f64]) -> SelectionDetail {
        let x = DMatrix::from_element(r.len(), 1, 1.0);
        let solution = solve_selection(&x, r, xi).unwrap();
        SelectionDetail { mechanism: 1, rows: (0..r.len()).collect(), x, r: r.to_vec(), solution }
    }

    #[test]
    fn intercept_only_mar_collapses_to_observed_share() {
        let r = [true, true, true, true, true, false, false, true];
        let v = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mask: Vec<bool> = r.to_vec();
        let t = ColumnTable::new(vec![("V".into(), Column::new(ColumnKind::Binary, v.to_vec(), mask).unwrap())]).unwrap();
        let d = detail(&r, &[0.0; 8]);
        let e = connecting_binary(&t, &d, "V", 1.0, 0.0).unwrap();
        // exact up to the solvers' convergence tolerance
        assert!((e.value - 4.0 / 6.0).abs() < 1e-9, "{e:?}");
        assert!(!e.clipped);
    }

    #[test]
    fn intercept_only_mar_collapses_to_observed_mean() {
        let r = [true, false, true, true, false, true];
        let v = [2.0, 0.0, 3.5, -1.0, 0.0, 7.0];
        let t = ColumnTable::new(vec![("V".into(), Column::new(ColumnKind::Continuous, v.to_vec(), r.to_vec()).unwrap())]).unwrap();
        let d = detail(&r, &[0.0; 6]);
        let e = connecting_continuous(&t, &d, "V", 1.0, 0.0).unwrap();
        assert!((e.value - 11.5 / 4.0).abs() < 1e-9, "{e:?}");
    }

    #[test]
    fn all_observed_is_an_error() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let d = SelectionDetail {
            mechanism: 1,
            rows: vec![0, 1, 2],
            x,
            r: vec![true; 3],
            solution: detail(&[true, false], &[0.0; 2]).solution,
        };
        let t = ColumnTable::new(vec![("V".into(), Column::complete(ColumnKind::Binary, vec![0.0, 1.0, 1.0]).unwrap())]).unwrap();
        assert!(connecting_binary(&t, &d, "V", 1.0, 0.0).is_err());
    }
}
