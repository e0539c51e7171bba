use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mnar::{ScaledVariable, SensitivityFunction};
use crate::tabular::{ColumnKind, Formula, IndicatorSource, TableView};

/// Ordered sub-mechanisms plus the analysis model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModularizationSpec {
    pub sub_mechanisms: Vec<SubMechanism>,
    pub analysis: Formula,
    /// Optional check on the methods, e.g. "IMIIM".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubMechanism {
    pub name: String,
    /// Columns whose joint observation makes R_k = 1. Empty for decisions.
    #[serde(default)]
    pub variables: Vec<String>,
    /// Binary column holding R_k for decision mechanisms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator: Option<String>,
    #[serde(flatten)]
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Ipw {
        model: Formula,
        /// ξ = δ Σ D/s; empty means δ must stay 0.
        #[serde(default)]
        sensitivity: Vec<ScaledVariable>,
    },
    Mi {
        imputation: Vec<ImputationModel>,
    },
    CoxIpw {
        model: Formula,
        horizon: f64,
        time: String,
        event: String,
    },
}

/// Imputation formulas for one variable. Each subject uses the first formula
/// whose predictors are all available for it; each formula is trained on the
/// observed subjects that would select it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationModel {
    pub variable: String,
    pub formulas: Vec<Formula>,
}

impl Method {
    pub fn letter(&self) -> char {
        match self {
            Method::Mi { .. } => 'M',
            _ => 'I',
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Ipw { .. } => "ipw",
            Method::Mi { .. } => "mi",
            Method::CoxIpw { .. } => "cox_ipw",
        }
    }
}

impl SubMechanism {
    pub fn is_decision(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn indicator_source(&self) -> IndicatorSource {
        match &self.indicator {
            Some(c) if self.variables.is_empty() => IndicatorSource::Decision(c.clone()),
            _ => IndicatorSource::Observed(self.variables.clone()),
        }
    }

    pub fn sensitivity(&self) -> Option<SensitivityFunction> {
        match &self.method {
            Method::Ipw { sensitivity, .. } if !sensitivity.is_empty() => {
                Some(SensitivityFunction::IpwLinear { terms: sensitivity.clone() })
            }
            Method::Mi { .. } => Some(SensitivityFunction::MiShift),
            _ => None,
        }
    }
}

impl ModularizationSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModularizationSpec = serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.sub_mechanisms.len()
    }

    pub fn assignment_code(&self) -> String {
        self.sub_mechanisms.iter().map(|m| m.method.letter()).collect()
    }

    pub fn indicator_sources(&self) -> Vec<IndicatorSource> {
        self.sub_mechanisms.iter().map(SubMechanism::indicator_source).collect()
    }

    /// Structural checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.sub_mechanisms.is_empty() {
            return Err(Error::Spec("no sub-mechanisms".into()));
        }
        if self.analysis.response.is_none() {
            return Err(Error::Spec("analysis formula needs a response".into()));
        }
        if let Some(code) = &self.assignment {
            if *code != self.assignment_code() {
                return Err(Error::Spec(format!(
                    "assignment `{code}` does not match the methods (`{}`)",
                    self.assignment_code()
                )));
            }
        }
        for (k, m) in self.sub_mechanisms.iter().enumerate() {
            let at = |msg: String| Error::Spec(format!("sub-mechanism {} (`{}`): {msg}", k + 1, m.name));
            if self.sub_mechanisms[..k].iter().any(|o| o.name == m.name) {
                return Err(at("duplicate name".into()));
            }
            match (&m.indicator, m.variables.is_empty()) {
                (None, true) => return Err(at("needs variables or an indicator column".into())),
                (Some(_), false) => return Err(at("has both variables and an indicator column".into())),
                _ => {}
            }
            match &m.method {
                Method::Mi { imputation } => {
                    if m.is_decision() {
                        return Err(at("decision mechanisms can only be handled by weighting".into()));
                    }
                    for v in &m.variables {
                        let n = imputation.iter().filter(|im| im.variable == *v).count();
                        if n != 1 {
                            return Err(at(format!("variable `{v}` needs exactly one imputation model, found {n}")));
                        }
                    }
                    for im in imputation {
                        if !m.variables.contains(&im.variable) {
                            return Err(at(format!("imputation model for `{}` outside the group", im.variable)));
                        }
                        if im.formulas.is_empty() {
                            return Err(at(format!("no formula for `{}`", im.variable)));
                        }
                        for f in &im.formulas {
                            if f.response.as_deref() != Some(im.variable.as_str()) {
                                return Err(at(format!("formula `{f}` must have response `{}`", im.variable)));
                            }
                            if f.predictors().contains(&im.variable.as_str()) {
                                return Err(at(format!("formula `{f}` uses its own response")));
                            }
                        }
                    }
                }
                Method::Ipw { sensitivity, .. } => {
                    for s in sensitivity {
                        if !(s.scale.is_finite() && s.scale > 0.0) {
                            return Err(at(format!("scale for `{}` must be positive", s.column)));
                        }
                    }
                }
                Method::CoxIpw { horizon, .. } => {
                    if !(horizon.is_finite() && *horizon > 0.0) {
                        return Err(at(format!("horizon {horizon} must be positive")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks against a table: columns exist and have usable kinds.
    pub fn check_table(&self, view: &dyn TableView) -> Result<()> {
        self.validate()?;
        self.analysis.check_columns(view)?;
        if *view.require(self.analysis.response.as_deref().expect("validated"))?.kind() != ColumnKind::Continuous {
            return Err(Error::Spec("analysis response must be continuous".into()));
        }
        for (k, m) in self.sub_mechanisms.iter().enumerate() {
            let at = |e: Error| Error::Spec(format!("sub-mechanism {} (`{}`): {e}", k + 1, m.name));
            for v in &m.variables {
                view.require(v).map_err(at)?;
            }
            if let Some(c) = &m.indicator {
                if *view.require(c).map_err(at)?.kind() != ColumnKind::Binary {
                    return Err(at(Error::Schema(format!("indicator `{c}` must be binary"))));
                }
            }
            match &m.method {
                Method::Ipw { model, sensitivity } => {
                    model.check_columns(view).map_err(at)?;
                    for s in sensitivity {
                        if view.require(&s.column).map_err(at)?.kind().is_categorical() {
                            return Err(at(Error::Schema(format!("sensitivity variable `{}` is categorical", s.column))));
                        }
                    }
                }
                Method::Mi { imputation } => {
                    for im in imputation {
                        for f in &im.formulas {
                            f.check_columns(view).map_err(at)?;
                        }
                    }
                }
                Method::CoxIpw { model, time, event, .. } => {
                    model.check_columns(view).map_err(at)?;
                    view.require(time).map_err(at)?;
                    if *view.require(event).map_err(at)?.kind() != ColumnKind::Binary {
                        return Err(at(Error::Schema(format!("event column `{event}` must be binary"))));
                    }
                }
            }
        }
        Ok(())
    }

    /// δ must have one entry per sub-mechanism; entries that have nowhere to
    /// go (decisions, IPW without a sensitivity function) must be 0.
    pub fn check_delta(&self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.k() {
            return Err(Error::Spec(format!("delta has {} entries for {} sub-mechanisms", delta.len(), self.k())));
        }
        for (k, (m, d)) in self.sub_mechanisms.iter().zip(delta).enumerate() {
            if !d.is_finite() {
                return Err(Error::Spec(format!("delta_{} is not finite", k + 1)));
            }
            if *d != 0.0 && (m.is_decision() || m.sensitivity().is_none()) {
                return Err(Error::Spec(format!(
                    "delta_{} = {d} but sub-mechanism `{}` has no sensitivity function",
                    k + 1,
                    m.name
                )));
            }
        }
        Ok(())
    }
}
