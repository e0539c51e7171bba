use crate::engine::{EngineOptions, ModularizationSpec};
use crate::error::{Error, Result};
use crate::inference::bootstrap_mi;
use crate::tabular::ColumnTable;

/// Width of the final bisection bracket.
pub const TIPPING_RESOLUTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignificanceStatus {
    Significant,
    NotSignificant,
    /// A CI bound sits exactly on zero.
    Boundary,
}

impl SignificanceStatus {
    pub fn from_interval(lo: f64, hi: f64) -> Self {
        if lo == 0.0 || hi == 0.0 {
            SignificanceStatus::Boundary
        } else if lo > 0.0 || hi < 0.0 {
            SignificanceStatus::Significant
        } else {
            SignificanceStatus::NotSignificant
        }
    }
}

/// Smallest |δ| in [lo, hi] at which `status` differs from its value at 0.
/// Each side is probed at its endpoint and its midpoint; a side whose probes
/// agree with δ = 0 is taken to have no flip. The result is the midpoint of
/// the final bracket.
pub fn bisect_tipping<F>(mut status: F, lo: f64, hi: f64, resolution: f64) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<SignificanceStatus>,
{
    if !(lo <= 0.0 && hi >= 0.0) {
        return Err(Error::Invalid(format!("search interval [{lo}, {hi}] must contain 0")));
    }
    let s0 = status(0.0)?;
    if s0 == SignificanceStatus::Boundary {
        return Ok(Some(0.0));
    }
    let mut best: Option<f64> = None;
    for end in [lo, hi] {
        if end == 0.0 {
            continue;
        }
        let outer = if status(end)? != s0 {
            Some(end)
        } else if status(end / 2.0)? != s0 {
            Some(end / 2.0)
        } else {
            None
        };
        let Some(mut b) = outer else { continue };
        let mut a = 0.0;
        while (b - a).abs() > resolution {
            let mid = 0.5 * (a + b);
            if status(mid)? == s0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let d = 0.5 * (a + b);
        if best.is_none_or(|x: f64| d.abs() < x.abs()) {
            best = Some(d);
        }
    }
    Ok(best)
}

/// Tipping point of one coefficient along δ_k (1-based `k`), with
/// significance read off bootstrap percentile intervals. All probes share
/// the seed.
#[allow(clippy::too_many_arguments)]
pub fn tipping_point(
    table: &ColumnTable,
    spec: &ModularizationSpec,
    k: usize,
    coefficient: &str,
    interval: (f64, f64),
    b: usize,
    m: usize,
    alpha: f64,
    seed: u64,
    options: &EngineOptions,
) -> Result<Option<f64>> {
    if k == 0 || k > spec.k() {
        return Err(Error::Invalid(format!("mechanism {k} does not exist")));
    }
    let status = |d: f64| -> Result<SignificanceStatus> {
        let mut delta = vec![0.0; spec.k()];
        delta[k - 1] = d;
        let r = bootstrap_mi(table, spec, &delta, b, m, alpha, seed, options)?;
        let j = r
            .index_of(coefficient)
            .ok_or_else(|| Error::Invalid(format!("no coefficient `{coefficient}` in the analysis model")))?;
        Ok(SignificanceStatus::from_interval(r.ci_lower[j], r.ci_upper[j]))
    };
    bisect_tipping(status, interval.0, interval.1, TIPPING_RESOLUTION)
}
