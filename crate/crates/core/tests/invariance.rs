use blendsa::glm::{fit_linear, fit_logistic, Link, ParameterDraw};
use blendsa::inference::percentile_interval;
use blendsa::mnar::{impute_binary, impute_continuous, solve_selection};
use blendsa::rng::stream;
use blendsa::survival::fit_cox;
use blendsa::expit;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// (x with intercept, y, w) of `n` rows and `p` columns.
fn instance(n: usize, p: usize) -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-2.0..2.0f64, n * (p - 1)),
        prop::collection::vec(-3.0..3.0f64, n),
        prop::collection::vec(0.1..4.0f64, n),
    )
        .prop_map(move |(xs, y, w)| {
            let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { xs[i * (p - 1) + j - 1] });
            (x, y, w)
        })
}

fn permuted(x: &DMatrix<f64>, v: &[f64], perm: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
    (DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(perm[i], j)]), perm.iter().map(|&i| v[i]).collect())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_weight_scale_and_row_order((x, y, w) in instance(24, 3), c in 0.01..100.0f64, perm in Just((0..24).collect::<Vec<usize>>()).prop_shuffle()) {
        let base = fit_linear(&x, &y, &w).unwrap();
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let s = fit_linear(&x, &y, &scaled).unwrap();
        prop_assert!(close(base.coefficients.as_slice(), s.coefficients.as_slice(), 1e-9));
        let (xp, yp) = permuted(&x, &y, &perm);
        let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let p = fit_linear(&xp, &yp, &wp).unwrap();
        prop_assert!(close(base.coefficients.as_slice(), p.coefficients.as_slice(), 1e-9));
    }

    #[test]
    fn logistic_weight_scale_and_row_order((x, y, w) in instance(60, 2), c in 0.05..20.0f64, perm in Just((0..60).collect::<Vec<usize>>()).prop_shuffle()) {
        // a noisy, non-separable response
        let yb: Vec<f64> = y.iter().enumerate().map(|(i, v)| f64::from(u8::from((v + x[(i, 1)] * 0.5 + ((i * 7) % 5) as f64 - 2.0) > 0.0))).collect();
        let base = match fit_logistic(&x, &yb, &w) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let s = fit_logistic(&x, &yb, &scaled).unwrap();
        prop_assert!(close(base.coefficients.as_slice(), s.coefficients.as_slice(), 1e-7));
        let (xp, yp) = permuted(&x, &yb, &perm);
        let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let p = fit_logistic(&xp, &yp, &wp).unwrap();
        prop_assert!(close(base.coefficients.as_slice(), p.coefficients.as_slice(), 1e-7));
    }

    #[test]
    fn cox_row_order(xs in prop::collection::vec(-2.0..2.0f64, 30), ts in prop::collection::vec(0.05..3.0f64, 30), ev in prop::collection::vec(any::<bool>(), 30), perm in Just((0..30).collect::<Vec<usize>>()).prop_shuffle()) {
        prop_assume!(ev.iter().filter(|e| **e).count() >= 5);
        let x = DMatrix::from_column_slice(30, 1, &xs);
        let base = match fit_cox(&x, &ts, &ev) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        let (xp, tp) = permuted(&x, &ts, &perm);
        let ep: Vec<bool> = perm.iter().map(|&i| ev[i]).collect();
        let p = fit_cox(&xp, &tp, &ep).unwrap();
        prop_assert!(close(base.coefficients.as_slice(), p.coefficients.as_slice(), 1e-8));
        prop_assert!((base.survival_at(1.0) - p.survival_at(1.0)).abs() < 1e-10);
    }

    /// Every converged selection solve leaves a residual below 1e-8.
    #[test]
    fn selection_residual_is_small((x, v, _) in instance(80, 2), r in prop::collection::vec(prop::bool::weighted(0.7), 80), delta in -2.0..2.0f64) {
        prop_assume!(r.iter().any(|b| !*b) && r.iter().filter(|b| **b).count() > 5);
        let xi: Vec<f64> = v.iter().map(|v| delta * v / 3.0).collect();
        if let Ok(sol) = solve_selection(&x, &r, &xi) {
            prop_assert!(sol.residual_norm < 1e-8, "{}", sol.residual_norm);
            for (i, w) in sol.weights.iter().enumerate() {
                if r[i] {
                    prop_assert!((w * sol.probabilities[i] - 1.0).abs() < 1e-12);
                } else {
                    prop_assert_eq!(*w, 0.0);
                }
            }
        }
    }

    /// Under a shared stream, continuous imputations move by exactly δ.
    #[test]
    fn continuous_imputation_shifts_by_delta(coef in prop::collection::vec(-2.0..2.0f64, 2), sd in 0.1..3.0f64, delta in -5.0..5.0f64, seed in any::<u64>()) {
        let x = DMatrix::from_fn(50, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 10.0 });
        let draw = ParameterDraw::fixed(coef, Some(sd), Link::Identity);
        let a = impute_continuous(&draw, &x, 0.0, &mut stream(seed, &[1])).unwrap();
        let b = impute_continuous(&draw, &x, delta, &mut stream(seed, &[1])).unwrap();
        for (a, b) in a.iter().zip(&b) {
            prop_assert!((b - a - delta).abs() <= 1e-12 * (1.0 + a.abs() + delta.abs()));
        }
    }

    /// Under a shared stream, binary imputations never fall as δ grows.
    #[test]
    fn binary_imputation_monotone(coef in prop::collection::vec(-2.0..2.0f64, 2), d1 in -3.0..3.0f64, step in 0.0..3.0f64, seed in any::<u64>()) {
        let x = DMatrix::from_fn(200, 2, |i, j| if j == 0 { 1.0 } else { (i % 7) as f64 - 3.0 });
        let draw = ParameterDraw::fixed(coef, None, Link::Logit);
        let lo = impute_binary(&draw, &x, d1, &mut stream(seed, &[2])).unwrap();
        let hi = impute_binary(&draw, &x, d1 + step, &mut stream(seed, &[2])).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(b >= a);
        }
        prop_assert!(expit(d1 + step + 0.1) > expit(d1 + step));
    }

    #[test]
    fn percentile_interval_is_ordered_and_inside(v in prop::collection::vec(-10.0..10.0f64, 1..200), alpha in 0.01..0.5f64) {
        let (lo, hi) = percentile_interval(&v, alpha);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= hi && min <= lo && hi <= max);
    }
}
