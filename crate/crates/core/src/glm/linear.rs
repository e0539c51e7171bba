use nalgebra::{DMatrix, DVector};

use super::{check_weights, singular, Link, ModelFit};
use crate::error::{Error, Result};
use crate::linalg::{mat_vec, spd_inverse, weighted_gram, xt_vec};

/// Weighted least squares. `σ̂² = Σ wᵢ rᵢ² / (n − p)` and the covariance is
/// `σ̂² (X'WX)⁻¹`.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<ModelFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", y.len())));
    }
    check_weights(n, w)?;
    if n < p {
        return Err(Error::Degenerate(format!("{n} rows for {p} coefficients")));
    }
    let gram = weighted_gram(x, w);
    let inv = spd_inverse(&gram).ok_or_else(|| singular(x, w))?;
    let wy: Vec<f64> = y.iter().zip(w).map(|(a, b)| a * b).collect();
    let beta: DVector<f64> = &inv * xt_vec(x, &wy);
    let fitted = mat_vec(x, beta.as_slice());
    let rss: f64 = y
        .iter()
        .zip(&fitted)
        .zip(w)
        .map(|((yi, fi), wi)| wi * (yi - fi) * (yi - fi))
        .sum();
    let df = n - p;
    let sigma2 = if df == 0 { 0.0 } else { rss / df as f64 };
    Ok(ModelFit {
        coefficients: beta,
        covariance: inv * sigma2,
        residual_variance: Some(sigma2),
        link: Link::Identity,
        converged: true,
        iterations: 1,
        n_obs: n,
        n_predictors: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..5).map(|i| 2.0 + 3.0 * i as f64).collect();
        let f = fit_linear(&x, &y, &[1.0; 5]).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((f.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(f.residual_variance.unwrap() < 1e-24);
    }

    #[test]
    fn collinear_columns_are_named() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64,
        });
        let err = fit_linear(&x, &[1.0; 6], &[1.0; 6]).unwrap_err();
        let named = err.with_column_names(&["(Intercept)".into(), "a".into(), "b".into()]);
        match named {
            Error::SingularDesign { columns } => assert_eq!(columns, vec!["b".to_string()]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_negative_weights() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(fit_linear(&x, &[1.0, 2.0, 3.0], &[1.0, -1.0, 1.0]).is_err());
    }
}
