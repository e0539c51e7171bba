use nalgebra::DMatrix;

/// Pseudo-observations that keep a separated logistic or multinomial
/// imputation model finite (White, Daniel and Royston, 2010). For every
/// non-constant column and every outcome level, two rows sit at the column
/// means with that column moved by ±sd/2 (kept inside the observed range).
/// They carry a total weight of p + 1, p being the number of such columns.
///
/// Returns the stacked design, responses and weights.
pub fn augment(x: &DMatrix<f64>, y: &[f64], w: &[f64], n_levels: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let (n, cols) = x.shape();
    let stats: Vec<(f64, f64, f64, f64)> = (0..cols)
        .map(|j| {
            let c = x.column(j);
            let mean = c.mean();
            let var = if n > 1 { c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            (mean, var.sqrt(), c.min(), c.max())
        })
        .collect();
    let varying: Vec<usize> = (0..cols).filter(|&j| stats[j].1 > 0.0).collect();
    let p = varying.len();
    if p == 0 {
        return (x.clone(), y.to_vec(), w.to_vec());
    }
    let extra = 2 * p * n_levels;
    let pseudo_w = (p + 1) as f64 / extra as f64;
    let mut xa = DMatrix::zeros(n + extra, cols);
    xa.rows_mut(0, n).copy_from(x);
    let mut ya = y.to_vec();
    let mut wa = w.to_vec();
    let mut row = n;
    for &j in &varying {
        for level in 0..n_levels {
            for sign in [0.5, -0.5] {
                for c in 0..cols {
                    xa[(row, c)] = stats[c].0;
                }
                let (mean, sd, lo, hi) = stats[j];
                xa[(row, j)] = (mean + sign * sd).clamp(lo, hi);
                ya.push(level as f64);
                wa.push(pseudo_w);
                row += 1;
            }
        }
    }
    (xa, ya, wa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::fit_logistic;

    #[test]
    fn separated_data_becomes_estimable() {
        let x = DMatrix::from_fn(8, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert!(fit_logistic(&x, &y, &[1.0; 8]).is_err());
        let (xa, ya, wa) = augment(&x, &y, &[1.0; 8], 2);
        assert_eq!(xa.nrows(), 12);
        assert!((wa[8..].iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let fit = fit_logistic(&xa, &ya, &wa).unwrap();
        assert!(fit.coefficients[1] > 0.0 && fit.coefficients[1].is_finite());
    }

    #[test]
    fn constant_design_is_untouched() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let (xa, ya, _) = augment(&x, &[0.0, 1.0, 1.0], &[1.0; 3], 2);
        assert_eq!(xa.nrows(), 3);
        assert_eq!(ya.len(), 3);
    }
}
