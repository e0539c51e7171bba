use nalgebra::{DMatrix, DVector};

/// X' diag(w) X for a column-major design.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    let mut wx = vec![0.0; x.nrows()];
    for j in 0..p {
        let cj = x.column(j);
        for (i, slot) in wx.iter_mut().enumerate() {
            *slot = w[i] * cj[i];
        }
        for k in j..p {
            let ck = x.column(k);
            let s: f64 = wx.iter().zip(ck.iter()).map(|(a, b)| a * b).sum();
            g[(j, k)] = s;
            g[(k, j)] = s;
        }
    }
    g
}

/// X' v
pub(crate) fn xt_vec(x: &DMatrix<f64>, v: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        x.ncols(),
        (0..x.ncols()).map(|j| x.column(j).iter().zip(v).map(|(a, b)| a * b).sum()),
    )
}

/// X b, returned as a plain vector.
pub(crate) fn mat_vec(x: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.nrows()];
    for (j, &bj) in b.iter().enumerate() {
        if bj == 0.0 {
            continue;
        }
        for (o, xij) in out.iter_mut().zip(x.column(j).iter()) {
            *o += xij * bj;
        }
    }
    out
}

/// Inverse of a symmetric positive-definite matrix, `None` when Cholesky fails.
pub(crate) fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let chol = a.clone().cholesky()?;
    let inv = chol.inverse();
    if inv.iter().all(|v| v.is_finite()) {
        Some(symmetrize(inv))
    } else {
        None
    }
}

pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub(crate) fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    a
}

/// Indices of columns that are (numerically) linear combinations of the
/// columns before them, found by modified Gram-Schmidt.
pub(crate) fn collinear_columns(x: &DMatrix<f64>, w: Option<&[f64]>) -> Vec<usize> {
    let n = x.nrows();
    let sw: Vec<f64> = match w {
        Some(w) => w.iter().map(|v| v.max(0.0).sqrt()).collect(),
        None => vec![1.0; n],
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let mut v: Vec<f64> = x.column(j).iter().zip(&sw).map(|(a, s)| a * s).collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for q in &basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= d * qi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-9 * norm0.max(1.0) {
            bad.push(j);
        } else {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    bad
}

/// Numerically stable logistic function.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
