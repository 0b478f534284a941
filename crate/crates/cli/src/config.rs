//! Run configuration: one JSON object, unknown keys rejected, dotted-path overrides.

use std::path::{Path, PathBuf};

use ek_core::capacity::DEFAULT_K;
use ek_core::dynamics::Scheme;
use ek_core::hitting::default_radius;
use ek_core::quadrature::QuadratureSpec;
use ek_core::{Family, PotentialModel};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Bad input: reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialBlock {
    pub family: Family,
    pub dimension: usize,
    #[serde(default)]
    pub parameters: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusKeyword {
    /// r = ε
    Epsilon,
    /// r = max(ε, 0.2)
    EpsilonFloored,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusRule {
    Fixed(f64),
    Rule(RadiusKeyword),
}

impl RadiusRule {
    pub fn radius(&self, epsilon: f64) -> f64 {
        match self {
            RadiusRule::Fixed(r) => *r,
            RadiusRule::Rule(RadiusKeyword::Epsilon) => epsilon,
            RadiusRule::Rule(RadiusKeyword::EpsilonFloored) => default_radius(epsilon),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallsBlock {
    #[serde(default = "default_rule")]
    pub target_radius: RadiusRule,
}

fn default_rule() -> RadiusRule {
    RadiusRule::Rule(RadiusKeyword::EpsilonFloored)
}

impl Default for BallsBlock {
    fn default() -> Self {
        Self {
            target_radius: default_rule(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Omitted: 50 × the predicted mean transition time.
    #[serde(default)]
    pub max_time: Option<f64>,
}

fn default_dt() -> f64 {
    1e-3
}

impl Default for IntegratorBlock {
    fn default() -> Self {
        Self {
            scheme: Scheme::default(),
            dt: default_dt(),
            max_time: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    #[serde(default = "default_n")]
    pub n_traj: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_n() -> usize {
    1000
}

impl Default for EnsembleBlock {
    fn default() -> Self {
        Self {
            n_traj: default_n(),
            base_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureBlock {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_panels")]
    pub panels: usize,
    /// Box size in units of δ = √(ε log(1/ε)).
    #[serde(default = "default_k")]
    pub k: f64,
}

fn default_points() -> usize {
    QuadratureSpec::default().points
}
fn default_panels() -> usize {
    QuadratureSpec::default().panels
}
fn default_k() -> f64 {
    DEFAULT_K
}

impl Default for QuadratureBlock {
    fn default() -> Self {
        Self {
            points: default_points(),
            panels: default_panels(),
            k: default_k(),
        }
    }
}

impl QuadratureBlock {
    pub fn spec(&self) -> QuadratureSpec {
        QuadratureSpec {
            points: self.points,
            panels: self.panels,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialBlock,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub epsilon_grid: Option<Vec<f64>>,
    /// Position hint for the starting well m.
    #[serde(default)]
    pub start_well: Option<Vec<f64>>,
    #[serde(default)]
    pub balls: BallsBlock,
    #[serde(default)]
    pub integrator: IntegratorBlock,
    #[serde(default)]
    pub ensemble: EnsembleBlock,
    #[serde(default)]
    pub quadrature: QuadratureBlock,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn epsilons(&self) -> Vec<f64> {
        match (&self.epsilon, &self.epsilon_grid) {
            (Some(e), _) => vec![*e],
            (None, Some(g)) => g.clone(),
            (None, None) => Vec::new(),
        }
    }

    pub fn model(&self) -> Result<PotentialModel, ConfigError> {
        let p = &self.potential;
        PotentialModel::new(p.family, p.dimension, p.parameters.clone(), p.offset)
            .map_err(|e| ConfigError(format!("potential: {e}")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.potential.dimension;
        self.model()?;
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad("gamma: must be a positive number");
        }
        let eps = self.epsilons();
        if eps.is_empty() {
            return bad("epsilon: give `epsilon` or a non-empty `epsilon_grid`");
        }
        if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return bad(format!("epsilon: {e} is outside (0, 1)"));
        }
        if let Some(h) = &self.start_well {
            if h.len() != d {
                return bad(format!("start_well: expected {d} coordinates, got {}", h.len()));
            }
        }
        if let RadiusRule::Fixed(r) = self.balls.target_radius {
            if !(r > 0.0) {
                return bad("balls.target_radius: must be positive");
            }
        }
        if !(self.integrator.dt > 0.0) {
            return bad("integrator.dt: must be positive");
        }
        if let Some(t) = self.integrator.max_time {
            if !(t > self.integrator.dt) {
                return bad("integrator.max_time: must exceed dt");
            }
        }
        if self.ensemble.n_traj == 0 {
            return bad("ensemble.n_traj: must be at least 1");
        }
        if self.quadrature.points == 0 || self.quadrature.panels == 0 {
            return bad("quadrature.points/panels: must be at least 1");
        }
        if !(self.quadrature.k > 0.0) {
            return bad("quadrature.k: must be positive");
        }
        Ok(())
    }

    /// sha256 of the canonical serialization (after defaults and overrides).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `a.b.c=value`; the value is parsed as JSON when possible, else taken as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("--set {assignment}: expected key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return bad(format!("--set {assignment}: empty key"));
    }
    let mut cur = root;
    for k in &keys[..keys.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError(format!("--set {path}: `{k}` is inside a non-object")))?;
        cur = obj
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut()
        .ok_or_else(|| ConfigError(format!("--set {path}: parent is not an object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = if overrides.is_empty() {
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError(format!("{}: {}: {}", path.display(), e.path(), e.inner())))?
    } else {
        let mut v: Value = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        serde_path_to_error::deserialize(v)
            .map_err(|e| ConfigError(format!("{}: {}: {}", path.display(), e.path(), e.inner())))?
    };
    Ok(cfg)
}
