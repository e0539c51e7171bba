//! Synthetic cohort shaped like a bariatric surgery study: baseline
//! comorbidities and BMI, an enrollment decision at 4.5 years, and follow-up
//! comorbidities and BMI among those still enrolled.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use super::scenario::SimulatedData;
use crate::engine::ModularizationSpec;
use crate::error::{Error, Result};
use crate::linalg::expit;
use crate::rng::{stream, tag, StreamRng};
use crate::tabular::{Column, ColumnKind, ColumnTable};

const GENERATOR: &str = include_str!("../../data/durable_like.json");
const IMIIM: &str = include_str!("../../data/durable_imiim.json");
const MIIMI: &str = include_str!("../../data/durable_miimi.json");

pub const DURABLE_ASSIGNMENTS: [&str; 2] = ["IMIIM", "MIIMI"];

/// `intercept + Σ coef · value`, with values looked up by name.
#[derive(Debug, Clone, Deserialize)]
struct Linear {
    #[serde(default)]
    intercept: f64,
    #[serde(flatten)]
    terms: BTreeMap<String, f64>,
}

impl Linear {
    fn eval(&self, values: &HashMap<&'static str, f64>) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .map(|(k, c)| c * values.get(k.as_str()).unwrap_or_else(|| panic!("generator term `{k}` is not defined yet")))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Deserialize)]
struct Normal {
    mean: Linear,
    sd: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct Categorical {
    levels: Vec<String>,
    baseline: String,
    /// One linear predictor per non-baseline level, in level order.
    logits: Vec<Linear>,
}

impl Categorical {
    fn kind(&self) -> ColumnKind {
        ColumnKind::categorical(self.levels.clone(), &self.baseline)
    }

    fn draw(&self, rng: &mut StreamRng, values: &HashMap<&'static str, f64>) -> usize {
        let etas: Vec<f64> = self.logits.iter().map(|l| l.eval(values)).collect();
        let denom = 1.0 + etas.iter().map(|e| e.exp()).sum::<f64>();
        let base = self.levels.iter().position(|l| *l == self.baseline).expect("baseline is a level");
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let others = (0..self.levels.len()).filter(|&j| j != base);
        for (j, eta) in others.zip(&etas) {
            acc += eta.exp() / denom;
            if u < acc {
                return j;
            }
        }
        base
    }
}

#[derive(Debug, Clone, Deserialize)]
struct Age {
    mean: f64,
    sd: f64,
    min: f64,
    max: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct Disenrollment {
    shape: f64,
    scale: f64,
    log_hazard: BTreeMap<String, f64>,
    horizon: f64,
    censor: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorConfig {
    age: Age,
    female: Linear,
    rygb: Linear,
    ckd0: Linear,
    ccs0: Categorical,
    bmi0: Normal,
    r1: Linear,
    r2: Linear,
    disenrollment: Disenrollment,
    ckd5: Linear,
    ccs5: Categorical,
    bmi5: Normal,
    r4: Linear,
    r5: Linear,
}

fn config() -> GeneratorConfig {
    serde_json::from_str(GENERATOR).expect("bundled generator config parses")
}

/// Enrollment horizon of the decision mechanism, in years.
pub fn durable_horizon() -> f64 {
    config().disenrollment.horizon
}

fn bern(rng: &mut StreamRng, eta: f64) -> f64 {
    if rng.random::<f64>() < expit(eta) {
        1.0
    } else {
        0.0
    }
}

/// Columns AGE, FEMALE, RYGB, CKD0, CCS0, BMI0, T, EVENT, ENROLLED, CKD5,
/// CCS5, BMI5. Baseline CKD0 and CCS0 are missing together, as are CKD5 and
/// CCS5; follow-up values are only seen for subjects still enrolled at the
/// horizon. The latent table holds every variable in full.
pub fn generate_durable_like(n: usize, seed: u64) -> SimulatedData {
    let cfg = config();
    let mut rng = stream(seed, &[tag::SCENARIO_DATA]);
    const NAMES: [&str; 12] = ["AGE", "FEMALE", "RYGB", "CKD0", "CCS0", "BMI0", "T", "EVENT", "ENROLLED", "CKD5", "CCS5", "BMI5"];
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(n); NAMES.len()];
    let mut masks: Vec<Vec<bool>> = vec![Vec::with_capacity(n); NAMES.len()];
    let mut latent_t = Vec::with_capacity(n);

    for _ in 0..n {
        let mut v: HashMap<&'static str, f64> = HashMap::new();
        let z: f64 = rng.sample(StandardNormal);
        let age = (cfg.age.mean + cfg.age.sd * z).clamp(cfg.age.min, cfg.age.max).round();
        v.insert("AGE", age);
        let female = bern(&mut rng, cfg.female.eval(&v));
        v.insert("FEMALE", female);
        let rygb = bern(&mut rng, cfg.rygb.eval(&v));
        v.insert("RYGB", rygb);
        let ckd0 = bern(&mut rng, cfg.ckd0.eval(&v));
        v.insert("CKD0", ckd0);
        v.insert("RYGB:CKD0", rygb * ckd0);
        let ccs0 = cfg.ccs0.draw(&mut rng, &v);
        v.insert("CCS0[1]", f64::from(ccs0 == 1));
        v.insert("CCS0[2]", f64::from(ccs0 == 2));
        let z: f64 = rng.sample(StandardNormal);
        let bmi0 = cfg.bmi0.mean.eval(&v) + cfg.bmi0.sd * z;
        v.insert("BMI0", bmi0);

        let r1 = rng.random::<f64>() < expit(cfg.r1.eval(&v));
        let r2 = rng.random::<f64>() < expit(cfg.r2.eval(&v));

        let d = &cfg.disenrollment;
        let lh: f64 = d.log_hazard.iter().map(|(k, c)| c * v[k.as_str()]).sum();
        // S(t) = exp(-(t/scale)^shape e^lh)
        let u: f64 = rng.random();
        let t = d.scale * (-u.ln() * (-lh).exp()).powf(1.0 / d.shape);
        let enrolled = t > d.horizon;

        let ckd5 = bern(&mut rng, cfg.ckd5.eval(&v));
        v.insert("CKD5", ckd5);
        let ccs5 = cfg.ccs5.draw(&mut rng, &v);
        let z: f64 = rng.sample(StandardNormal);
        let bmi5 = cfg.bmi5.mean.eval(&v) + cfg.bmi5.sd * z;
        v.insert("BMI5", bmi5);
        let r4 = enrolled && rng.random::<f64>() < expit(cfg.r4.eval(&v));
        let r5 = enrolled && rng.random::<f64>() < expit(cfg.r5.eval(&v));

        let row = [
            (age, true),
            (female, true),
            (rygb, true),
            (ckd0, r1),
            (ccs0 as f64, r1),
            (bmi0, r2),
            (t.min(d.censor), true),
            (f64::from(t <= d.censor), true),
            (f64::from(enrolled), true),
            (ckd5, r4),
            (ccs5 as f64, r4),
            (bmi5, r5),
        ];
        for (j, (x, m)) in row.into_iter().enumerate() {
            values[j].push(x);
            masks[j].push(m);
        }
        latent_t.push(t);
    }

    let kinds = [
        ColumnKind::Continuous,
        ColumnKind::Binary,
        ColumnKind::Binary,
        ColumnKind::Binary,
        cfg.ccs0.kind(),
        ColumnKind::Continuous,
        ColumnKind::Continuous,
        ColumnKind::Binary,
        ColumnKind::Binary,
        ColumnKind::Binary,
        cfg.ccs5.kind(),
        ColumnKind::Continuous,
    ];
    let mut observed = Vec::new();
    let mut latent = Vec::new();
    for (j, name) in NAMES.iter().enumerate() {
        let full = Column::complete(kinds[j].clone(), values[j].clone()).expect("generated values are valid");
        let col = Column::new(kinds[j].clone(), values[j].clone(), masks[j].clone()).expect("generated values are valid");
        observed.push((name.to_string(), col));
        if *name == "T" {
            latent.push((name.to_string(), Column::complete(ColumnKind::Continuous, latent_t.clone()).expect("finite")));
        } else {
            latent.push((name.to_string(), full));
        }
    }
    SimulatedData {
        table: ColumnTable::new(observed).expect("consistent lengths"),
        latent: ColumnTable::new(latent).expect("consistent lengths"),
    }
}

/// The five-mechanism modularization for IMIIM or MIIMI.
pub fn durable_spec(assignment: &str) -> Result<ModularizationSpec> {
    let json = match assignment {
        "IMIIM" => IMIIM,
        "MIIMI" => MIIMI,
        other => return Err(Error::Invalid(format!("assignment `{other}` is not IMIIM or MIIMI"))),
    };
    ModularizationSpec::from_json(json)
}
