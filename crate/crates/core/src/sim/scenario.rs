use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_blended, EngineOptions, ImputationModel, Method, ModularizationSpec, SubMechanism};
use crate::error::{Error, Result};
use crate::inference::bootstrap_mi;
use crate::linalg::expit;
use crate::mnar::ScaledVariable;
use crate::rng::{derive_seed, stream, tag, StreamRng};
use crate::tabular::{Column, ColumnKind, ColumnTable, Formula};

/// Enrollment threshold on the disenrollment time.
pub const ENROLLMENT_HORIZON: f64 = 2.0 / 3.0;
/// Administrative end of follow-up for the observed time.
pub const FOLLOW_UP_END: f64 = 1.0;
pub const Y_NOISE_SD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Generator MNAR strengths (δ₂ on Z2 in R2, δ₃ on Y in R3).
    pub delta_gen: [f64; 2],
    pub seed: u64,
}

/// One subject's complete data and missingness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subject {
    pub x: f64,
    pub z1: f64,
    pub z2: f64,
    pub y: f64,
    pub t: f64,
    pub r1: bool,
    pub r2: bool,
    pub r3: bool,
}

pub fn draw_subject(rng: &mut StreamRng, delta_gen: [f64; 2], y_noise_sd: f64) -> Subject {
    let bern = |rng: &mut StreamRng, p: f64| if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    let z1 = bern(rng, expit(-0.5));
    let x = bern(rng, expit(-0.5 - 0.25 * z1));
    let z2 = bern(rng, expit(-1.15 - 0.35 * x + 0.6 * z1 + 0.4 * x * z1));
    let e: f64 = rng.sample(StandardNormal);
    let y = 0.45 - 0.45 * x + 1.40 * z2 - 1.8 * x * z2 + y_noise_sd * e;
    let shape = (1.25 + 0.5 * x - 0.55 * z1 - 0.2 * x * z1).exp();
    // S(t) = exp(-t^a)
    let u = 1.0 - rng.random::<f64>();
    let t = (-u.ln()).powf(1.0 / shape);
    let r1 = t > ENROLLMENT_HORIZON;
    let p2 = expit(1.20 - 0.70 * x + 0.65 * z1 - 0.55 * x * z1 + delta_gen[0] * z2);
    let p3 = expit(0.45 + 0.35 * x - 0.70 * z2 - 0.65 * x * z2 + delta_gen[1] * y);
    let r2 = rng.random::<f64>() < p2;
    let r3 = rng.random::<f64>() < p3;
    Subject { x, z1, z2, y, t, r1, r2, r3 }
}

/// Generated data plus the complete values behind every masked cell.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub table: ColumnTable,
    pub latent: ColumnTable,
}

/// Columns X, Z1, Z2, Y, T, EVENT, R1. Z2 is observed when R1 R2 = 1 and Y
/// when R1 R3 = 1; T is the disenrollment time censored at the end of
/// follow-up. The latent table holds Z2, Y, T, R1, R2, R3 in full.
pub fn generate_scenario(config: &ScenarioConfig) -> SimulatedData {
    let mut rng = stream(config.seed, &[tag::SCENARIO_DATA]);
    let subjects: Vec<Subject> = (0..config.n).map(|_| draw_subject(&mut rng, config.delta_gen, Y_NOISE_SD)).collect();
    scenario_tables(&subjects)
}

fn col(kind: ColumnKind, v: Vec<f64>) -> Column {
    Column::complete(kind, v).expect("generated values are valid")
}

fn masked(kind: ColumnKind, v: Vec<f64>, mask: Vec<bool>) -> Column {
    Column::new(kind, v, mask).expect("generated values are valid")
}

fn scenario_tables(s: &[Subject]) -> SimulatedData {
    let get = |f: &dyn Fn(&Subject) -> f64| s.iter().map(f).collect::<Vec<f64>>();
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    let z2_obs: Vec<bool> = s.iter().map(|v| v.r1 && v.r2).collect();
    let y_obs: Vec<bool> = s.iter().map(|v| v.r1 && v.r3).collect();
    let table = ColumnTable::new(vec![
        ("X".into(), col(ColumnKind::Binary, get(&|v| v.x))),
        ("Z1".into(), col(ColumnKind::Binary, get(&|v| v.z1))),
        ("Z2".into(), masked(ColumnKind::Binary, get(&|v| v.z2), z2_obs)),
        ("Y".into(), masked(ColumnKind::Continuous, get(&|v| v.y), y_obs)),
        ("T".into(), col(ColumnKind::Continuous, get(&|v| v.t.min(FOLLOW_UP_END)))),
        ("EVENT".into(), col(ColumnKind::Binary, get(&|v| b(v.t <= FOLLOW_UP_END)))),
        ("R1".into(), col(ColumnKind::Binary, get(&|v| b(v.r1)))),
    ])
    .expect("consistent lengths");
    let latent = ColumnTable::new(vec![
        ("Z2".into(), col(ColumnKind::Binary, get(&|v| v.z2))),
        ("Y".into(), col(ColumnKind::Continuous, get(&|v| v.y))),
        ("T".into(), col(ColumnKind::Continuous, get(&|v| v.t))),
        ("R1".into(), col(ColumnKind::Binary, get(&|v| b(v.r1)))),
        ("R2".into(), col(ColumnKind::Binary, get(&|v| b(v.r2)))),
        ("R3".into(), col(ColumnKind::Binary, get(&|v| b(v.r3)))),
    ])
    .expect("consistent lengths");
    SimulatedData { table, latent }
}

/// Exact population coefficients of Y ~ X + Z1 + X:Z1. The model is
/// saturated in (X, Z1), so they follow from the four cell means.
pub fn reference_beta() -> [f64; 4] {
    let cell = |x: f64, z1: f64| {
        let p = expit(-1.15 - 0.35 * x + 0.6 * z1 + 0.4 * x * z1);
        0.45 - 0.45 * x + (1.40 - 1.8 * x) * p
    };
    let (m00, m10, m01, m11) = (cell(0.0, 0.0), cell(1.0, 0.0), cell(0.0, 1.0), cell(1.0, 1.0));
    [m00, m10 - m00, m01 - m00, m11 - m10 - m01 + m00]
}

/// Monte Carlo approximation: OLS of Y on (1, X, Z1, X Z1) over `n`
/// complete subjects, accumulated without building a table.
pub fn approximate_true_beta(n: usize, seed: u64, y_noise_sd: f64) -> [f64; 4] {
    let mut rng = stream(seed, &[tag::SCENARIO_DATA]);
    // saturated model: cell sums are sufficient
    let mut count = [[0.0f64; 2]; 2];
    let mut sum = [[0.0f64; 2]; 2];
    let mut comp = [[0.0f64; 2]; 2];
    for _ in 0..n {
        let s = draw_subject(&mut rng, [0.0, 0.0], y_noise_sd);
        let (i, j) = (s.x as usize, s.z1 as usize);
        count[i][j] += 1.0;
        // Neumaier
        let t = sum[i][j] + s.y;
        if sum[i][j].abs() >= s.y.abs() {
            comp[i][j] += (sum[i][j] - t) + s.y;
        } else {
            comp[i][j] += (s.y - t) + sum[i][j];
        }
        sum[i][j] = t;
    }
    let mean = |i: usize, j: usize| (sum[i][j] + comp[i][j]) / count[i][j];
    let (m00, m10, m01, m11) = (mean(0, 0), mean(1, 0), mean(0, 1), mean(1, 1));
    [m00, m10 - m00, m01 - m00, m11 - m10 - m01 + m00]
}

pub const ASSIGNMENTS: [&str; 4] = ["III", "IMI", "IIM", "IMM"];

fn f(s: &str) -> Formula {
    Formula::parse(s).expect("literal formula")
}

/// The three-mechanism modularization for one assignment code.
pub fn scenario_spec(assignment: &str) -> Result<ModularizationSpec> {
    let code: Vec<char> = assignment.chars().collect();
    if code.len() != 3 || code[0] != 'I' || code[1..].iter().any(|c| *c != 'I' && *c != 'M') {
        return Err(Error::Invalid(format!("assignment `{assignment}` is not one of III, IMI, IIM, IMM")));
    }
    let enrollment = SubMechanism {
        name: "enrollment".into(),
        variables: vec![],
        indicator: Some("R1".into()),
        method: Method::CoxIpw {
            model: f("~ X + Z1 + X:Z1"),
            horizon: ENROLLMENT_HORIZON,
            time: "T".into(),
            event: "EVENT".into(),
        },
    };
    let z2 = SubMechanism {
        name: "z2".into(),
        variables: vec!["Z2".into()],
        indicator: None,
        method: if code[1] == 'I' {
            Method::Ipw { model: f("~ X + Z1 + X:Z1"), sensitivity: vec![ScaledVariable { column: "Z2".into(), scale: 1.0 }] }
        } else {
            Method::Mi {
                imputation: vec![ImputationModel {
                    variable: "Z2".into(),
                    formulas: vec![f("Z2 ~ X + Z1 + X:Z1 + Y + X:Y"), f("Z2 ~ X + Z1 + X:Z1")],
                }],
            }
        },
    };
    let y = SubMechanism {
        name: "y".into(),
        variables: vec!["Y".into()],
        indicator: None,
        method: if code[2] == 'I' {
            Method::Ipw { model: f("~ X + Z2 + X:Z2"), sensitivity: vec![ScaledVariable { column: "Y".into(), scale: 1.0 }] }
        } else {
            Method::Mi { imputation: vec![ImputationModel { variable: "Y".into(), formulas: vec![f("Y ~ X + Z2 + X:Z2")] }] }
        },
    };
    let spec = ModularizationSpec {
        sub_mechanisms: vec![enrollment, z2, y],
        analysis: f("Y ~ X + Z1 + X:Z1"),
        assignment: Some(assignment.to_string()),
    };
    spec.validate()?;
    Ok(spec)
}

/// Generator settings and the analysis δ index for the two scenarios.
pub fn scenario_setup(scenario: u8) -> Result<([f64; 2], usize)> {
    match scenario {
        // Z2 MNAR; sweep δ on the Z2 mechanism
        1 => Ok(([0.5, 0.0], 1)),
        // Y MNAR; sweep δ on the Y mechanism
        2 => Ok(([0.0, 0.5], 2)),
        _ => Err(Error::Invalid(format!("scenario {scenario} is not 1 or 2"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub scenario: u8,
    pub assignment: String,
    pub deltas: Vec<f64>,
    pub n: usize,
    pub n_reps: usize,
    pub m: usize,
    pub seed: u64,
    /// Bootstrap replicates per fit for coverage; 0 skips intervals.
    #[serde(default)]
    pub b: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub delta: f64,
    pub coefficient_names: Vec<String>,
    /// Mean of (β̂ − β)/|β| × 100 over successful replications.
    pub pct_bias: Vec<f64>,
    pub mc_se: Vec<f64>,
    pub coverage: Option<Vec<f64>>,
    pub n_reps: usize,
    pub n_failed: usize,
}

impl BiasReport {
    pub fn mean_abs_bias(&self) -> f64 {
        self.pct_bias.iter().map(|b| b.abs()).sum::<f64>() / self.pct_bias.len() as f64
    }
}

struct RepOutcome {
    estimates: Vec<Option<Vec<f64>>>,
    covered: Vec<Option<Vec<bool>>>,
}

/// Seeds of one replication: (data, analysis).
pub fn replication_seeds(seed: u64, rep: usize) -> (u64, u64) {
    (derive_seed(seed, &[tag::SCENARIO_DATA, rep as u64]), derive_seed(seed, &[tag::SCENARIO_ANALYSIS, rep as u64]))
}

/// Percent bias of each coefficient per δ over `n_reps` generated datasets.
/// All δ values of a replication share the data and the analysis seed.
pub fn run_scenario(run: &ScenarioRun) -> Result<Vec<BiasReport>> {
    let (delta_gen, axis) = scenario_setup(run.scenario)?;
    let spec = scenario_spec(&run.assignment)?;
    if run.n_reps == 0 || run.m == 0 {
        return Err(Error::Invalid("n_reps and M must be positive".into()));
    }
    let beta = reference_beta();
    let options = EngineOptions::default();
    let outcomes: Vec<RepOutcome> = (0..run.n_reps)
        .into_par_iter()
        .map(|rep| {
            let (data_seed, analysis_seed) = replication_seeds(run.seed, rep);
            let data = generate_scenario(&ScenarioConfig { n: run.n, delta_gen, seed: data_seed });
            let mut estimates = Vec::with_capacity(run.deltas.len());
            let mut covered = Vec::with_capacity(run.deltas.len());
            for &d in &run.deltas {
                let mut delta = vec![0.0; 3];
                delta[axis] = d;
                if run.b > 0 {
                    match bootstrap_mi(&data.table, &spec, &delta, run.b, run.m, run.alpha, analysis_seed, &options) {
                        Ok(br) => {
                            covered.push(Some((0..4).map(|j| br.ci_lower[j] <= beta[j] && beta[j] <= br.ci_upper[j]).collect()));
                            estimates.push(Some(br.point.theta_hat));
                        }
                        Err(_) => {
                            covered.push(None);
                            estimates.push(None);
                        }
                    }
                } else {
                    estimates.push(run_blended(&data.table, &spec, &delta, run.m, analysis_seed, &options).ok().map(|f| f.theta_hat));
                    covered.push(None);
                }
            }
            RepOutcome { estimates, covered }
        })
        .collect();

    let names = vec!["(Intercept)".to_string(), "X".into(), "Z1".into(), "X:Z1".into()];
    Ok(run
        .deltas
        .iter()
        .enumerate()
        .map(|(di, &d)| {
            let ok: Vec<&Vec<f64>> = outcomes.iter().filter_map(|o| o.estimates[di].as_ref()).collect();
            let n_ok = ok.len();
            let mut pct_bias = vec![f64::NAN; 4];
            let mut mc_se = vec![f64::NAN; 4];
            for j in 0..4 {
                let rel: Vec<f64> = ok.iter().map(|t| (t[j] - beta[j]) / beta[j].abs() * 100.0).collect();
                if n_ok > 0 {
                    let mean = crate::compensated_sum(rel.iter().copied()) / n_ok as f64;
                    pct_bias[j] = mean;
                    if n_ok > 1 {
                        let var = crate::compensated_sum(rel.iter().map(|r| (r - mean) * (r - mean))) / (n_ok - 1) as f64;
                        mc_se[j] = (var / n_ok as f64).sqrt();
                    }
                }
            }
            let coverage = (run.b > 0).then(|| {
                let cov: Vec<&Vec<bool>> = outcomes.iter().filter_map(|o| o.covered[di].as_ref()).collect();
                (0..4).map(|j| cov.iter().filter(|c| c[j]).count() as f64 / cov.len().max(1) as f64).collect()
            });
            BiasReport {
                delta: d,
                coefficient_names: names.clone(),
                pct_bias,
                mc_se,
                coverage,
                n_reps: n_ok,
                n_failed: run.n_reps - n_ok,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::TableView;

    #[test]
    fn reference_beta_matches_rounded_values() {
        let b = reference_beta();
        for (v, p) in b.iter().zip([0.787, -0.859, 0.176, -0.253]) {
            assert!((v - p).abs() < 1.5e-3, "{v} vs {p}");
        }
    }

    #[test]
    fn specs_for_every_assignment() {
        for a in ASSIGNMENTS {
            assert_eq!(scenario_spec(a).unwrap().assignment_code(), a);
        }
        assert!(scenario_spec("MII").is_err());
    }

    #[test]
    fn latent_agrees_with_observed_cells() {
        let d = generate_scenario(&ScenarioConfig { n: 500, delta_gen: [0.5, 0.0], seed: 3 });
        for name in ["Z2", "Y"] {
            let obs = d.table.column(name).unwrap();
            let lat = d.latent.column(name).unwrap();
            for i in 0..500 {
                if let Some(v) = obs.get(i) {
                    assert_eq!(Some(v), lat.get(i));
                }
            }
        }
    }
}
