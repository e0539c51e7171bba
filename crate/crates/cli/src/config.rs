use std::fs;
use std::path::{Path, PathBuf};

use blendsa::engine::ModularizationSpec;
use blendsa::sweep::{default_grid, parse_grid, SweepAxis};
use blendsa::tabular::Schema;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

/// A δ grid written either as `"lo:hi:step"` or as an explicit list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Range(String),
    Values(Vec<f64>),
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            GridSpec::Range(s) => parse_grid(s).map_err(|e| CliError::Config(e.to_string())),
            GridSpec::Values(v) => {
                let mut v = v.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub mechanism: usize,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TippingConfig {
    pub mechanism: usize,
    pub coefficient: String,
    #[serde(default = "default_interval")]
    pub interval: [f64; 2],
}

fn default_interval() -> [f64; 2] {
    [-2.0, 2.0]
}

fn default_m() -> usize {
    10
}

fn default_b() -> usize {
    300
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: PathBuf,
    schema: Value,
    spec: Value,
    #[serde(default)]
    delta: Option<Vec<f64>>,
    #[serde(default)]
    sweep: Vec<AxisConfig>,
    #[serde(default = "default_m")]
    m: usize,
    #[serde(default = "default_b")]
    b: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    seed: u64,
    #[serde(default)]
    weight_cap: Option<f64>,
    #[serde(default)]
    per_cell_ci: bool,
    #[serde(default)]
    full_grid: bool,
    #[serde(default)]
    heatmap_coefficient: Option<String>,
    #[serde(default)]
    tipping: Option<TippingConfig>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: Schema,
    pub spec: ModularizationSpec,
    pub delta: Vec<f64>,
    pub sweep: Vec<AxisConfig>,
    pub m: usize,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub weight_cap: Option<f64>,
    pub per_cell_ci: bool,
    pub full_grid: bool,
    pub heatmap_coefficient: Option<String>,
    pub tipping: Option<TippingConfig>,
    /// Raw bytes of the config file, for the manifest hash.
    pub bytes: Vec<u8>,
}

/// Turn a serde path into a JSON pointer such as `/spec/sub_mechanisms/0/method`.
fn pointer(prefix: &str, path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = prefix.to_string();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => s.push_str("/?"),
        }
    }
    if s.is_empty() {
        "/".into()
    } else {
        s
    }
}

fn parse_text<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("{origin} at {}: {}", pointer("", e.path()), e.inner())))
}

fn parse_value<T: DeserializeOwned>(value: Value, prefix: &str, origin: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value)
        .map_err(|e| CliError::Config(format!("{origin} at {}: {}", pointer(prefix, e.path()), e.inner())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Either a path (relative to the config file) or the object itself.
fn inline_or_file<T: DeserializeOwned>(value: Value, key: &str, base: &Path) -> Result<T, CliError> {
    match value {
        Value::String(p) => {
            let path = base.join(p);
            parse_text(&read(&path)?, &path.display().to_string())
        }
        other => parse_value(other, &format!("/{key}"), "config"),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = read(path)?;
        let raw: RawConfig = parse_text(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let schema: Schema = inline_or_file(raw.schema, "schema", base)?;
        schema.validate().map_err(|e| CliError::Config(format!("schema: {e}")))?;
        let spec: ModularizationSpec = inline_or_file(raw.spec, "spec", base)?;
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let delta = raw.delta.unwrap_or_else(|| vec![0.0; spec.k()]);
        spec.check_delta(&delta).map_err(|e| CliError::Config(format!("/delta: {e}")))?;
        if raw.m == 0 {
            return Err(CliError::Config("/m: M must be at least 1".into()));
        }
        if !(raw.alpha > 0.0 && raw.alpha < 1.0) {
            return Err(CliError::Config("/alpha: must lie in (0, 1)".into()));
        }
        Ok(RunConfig {
            data: base.join(&raw.data),
            schema,
            spec,
            delta,
            sweep: raw.sweep,
            m: raw.m,
            b: raw.b,
            alpha: raw.alpha,
            seed: raw.seed,
            weight_cap: raw.weight_cap,
            per_cell_ci: raw.per_cell_ci,
            full_grid: raw.full_grid,
            heatmap_coefficient: raw.heatmap_coefficient,
            tipping: raw.tipping,
            bytes: text.into_bytes(),
        })
    }

    /// Sweep axes from the config, then from the command line for
    /// mechanisms the config does not mention. Missing grids fall back to the
    /// defaults for the mechanism's method.
    pub fn axes(&self, extra: &[(usize, Option<Vec<f64>>)]) -> Result<Vec<SweepAxis>, CliError> {
        let mut out: Vec<SweepAxis> = Vec::new();
        let mut add = |mechanism: usize, grid: Option<Vec<f64>>| -> Result<(), CliError> {
            if out.iter().any(|a| a.mechanism == mechanism) {
                return Ok(());
            }
            let sm = self
                .spec
                .sub_mechanisms
                .get(mechanism.wrapping_sub(1))
                .ok_or_else(|| CliError::Config(format!("mechanism {mechanism} does not exist")))?;
            let grid = match grid {
                Some(g) => g,
                None => default_grid(&sm.method)
                    .ok_or_else(|| CliError::Config(format!("mechanism {mechanism} (`{}`) has no δ to vary", sm.name)))?,
            };
            out.push(SweepAxis { mechanism, grid });
            Ok(())
        };
        for a in &self.sweep {
            add(a.mechanism, a.grid.as_ref().map(GridSpec::values).transpose()?)?;
        }
        for (m, g) in extra {
            add(*m, g.clone())?;
        }
        Ok(out)
    }
}

/// `k` or `k=lo:hi:step` from the command line.
pub fn parse_axis_arg(s: &str) -> Result<(usize, Option<Vec<f64>>), String> {
    let (k, g) = match s.split_once('=') {
        Some((k, g)) => (k, Some(g)),
        None => (s, None),
    };
    let k: usize = k.trim().parse().map_err(|_| format!("`{k}` is not a mechanism number"))?;
    let grid = g.map(parse_grid).transpose().map_err(|e| e.to_string())?;
    Ok((k, grid))
}
