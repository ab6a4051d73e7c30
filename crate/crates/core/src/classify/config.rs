//! Map, cocycle and budget configuration read from TOML or JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cocycle::{CocycleError, CocycleSpec};
use crate::models::{
    build_map, expr::eval_constant, parse_map_expression, spec_from_params, ExprError,
    LiftedSkewMap, MapSpec, ModelError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown config extension `{0}` (use .toml or .json)")]
    Extension(String),
    #[error("omega is required (in the file or via --omega)")]
    MissingOmega,
    #[error("{0} is required for family `{1}`")]
    Missing(&'static str, String),
    #[error("{0}")]
    Expression(#[from] ExprError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error("map failed validation as a fibre homeomorphism family: {0}")]
    Validation(String),
}

/// A number, or a closed formula such as `"(sqrt(5)-1)/2"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Formula(String),
}

impl Scalar {
    pub fn value(&self) -> Result<f64, ExprError> {
        match self {
            Scalar::Number(v) => Ok(*v),
            Scalar::Formula(s) => eval_constant(s),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Number(v)
    }
}

/// SL(2,ℝ) cocycle description. `kind` is one of `herman`, `diagonal`,
/// `rotation`, `entries`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocycleConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m11: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m12: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m21: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m22: Option<String>,
    #[serde(default)]
    pub allow_nonzero_degree: bool,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl CocycleConfig {
    pub fn build(&self, omega: f64) -> Result<CocycleSpec, ConfigError> {
        let need = |v: &Option<Scalar>, name: &'static str| -> Result<f64, ConfigError> {
            Ok(v.as_ref()
                .ok_or_else(|| ConfigError::Missing(name, self.kind.clone()))?
                .value()?)
        };
        Ok(match self.kind.as_str() {
            "herman" => {
                let alpha = self
                    .alpha
                    .as_ref()
                    .map(Scalar::value)
                    .transpose()?
                    .unwrap_or(0.0);
                CocycleSpec::herman_rotated(omega, need(&self.lambda, "lambda")?, alpha)?
            }
            "diagonal" => CocycleSpec::diagonal(omega, need(&self.lambda, "lambda")?)?,
            "rotation" => CocycleSpec::rotation(omega, need(&self.angle, "angle")?)?,
            "entries" => {
                let entry = |e: &Option<String>, name: &'static str| -> Result<_, ConfigError> {
                    let src = e
                        .as_deref()
                        .ok_or_else(|| ConfigError::Missing(name, self.kind.clone()))?;
                    Ok(parse_map_expression(src, &self.params)?)
                };
                let entries = [
                    entry(&self.m11, "m11")?,
                    entry(&self.m12, "m12")?,
                    entry(&self.m21, "m21")?,
                    entry(&self.m22, "m22")?,
                ];
                CocycleSpec::from_entries(omega, entries, "entries", self.allow_nonzero_degree)?
            }
            other => {
                return Err(ConfigError::Missing(
                    "a cocycle kind among herman, diagonal, rotation, entries",
                    other.to_string(),
                ))
            }
        })
    }
}

/// A forced circle map. `family` is one of `rigid`, `skew`, `arnold`,
/// `attracting-graph`, `custom` or `projective`; `conjugacy`, when present,
/// replaces the map by ĥ⁻¹_{θ+ω} ∘ T̂_θ ∘ ĥ_θ.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Scalar>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conjugacy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cocycle: Option<CocycleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<super::Budgets>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<super::Thresholds>,
}

impl MapConfig {
    pub fn new(family: &str, omega: f64) -> Self {
        MapConfig {
            family: family.to_string(),
            omega: Some(omega.into()),
            ..Default::default()
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn with_expression(mut self, e: &str) -> Self {
        self.expression = Some(e.to_string());
        self
    }

    pub fn omega_value(&self, fallback: Option<f64>) -> Result<f64, ConfigError> {
        match (&self.omega, fallback) {
            (_, Some(w)) => Ok(w),
            (Some(s), None) => Ok(s.value()?),
            (None, None) => Err(ConfigError::MissingOmega),
        }
    }

    pub fn spec(&self, omega: f64) -> Result<MapSpec, ConfigError> {
        let inner = if self.family == "projective" {
            let c = self
                .cocycle
                .as_ref()
                .ok_or_else(|| ConfigError::Missing("cocycle", self.family.clone()))?;
            MapSpec::Projective(c.build(omega)?)
        } else {
            spec_from_params(&self.family, &self.params, self.expression.as_deref())?
        };
        Ok(match &self.conjugacy {
            Some(h) => MapSpec::Conjugated {
                inner: Box::new(inner),
                h: parse_map_expression(h, &self.params)?,
            },
            None => inner,
        })
    }

    /// Builds the map; `omega_override` takes precedence over the file.
    pub fn build(&self, omega_override: Option<f64>) -> Result<LiftedSkewMap, ConfigError> {
        let omega = self.omega_value(omega_override)?;
        Ok(build_map(&self.spec(omega)?, omega)?)
    }

    pub fn from_str_ext(src: &str, ext: &str) -> Result<Self, ConfigError> {
        parse_by_ext(src, ext)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        load_file(path)
    }
}

impl CocycleConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        load_file(path)
    }
}

fn parse_by_ext<T: for<'de> Deserialize<'de>>(src: &str, ext: &str) -> Result<T, ConfigError> {
    match ext {
        "toml" => Ok(toml::from_str(src)?),
        "json" => Ok(serde_json::from_str(src)?),
        other => Err(ConfigError::Extension(other.to_string())),
    }
}

fn load_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    parse_by_ext(&src, &ext)
}
