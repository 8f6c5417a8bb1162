//! JSON experiment configuration.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use super::ExpError;
use crate::cammarl::ModelingMode;
use crate::conformal::{ClassifierConfig, ConformalError, DEFAULT_LAMBDA_GRID};
use crate::env::{EnvError, EnvSpec};
use crate::ppo::{PpoConfig, PpoError};
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides `output_dir` when set.
pub const OUTPUT_ROOT_VAR: &str = "CAMMARL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Run directory name; defaults to `<env>-<mode>`.
    #[serde(default)]
    pub run_id: Option<String>,
    /// Either a registered name (`"cn"`, `"lbf"`, `"pressure_plate"`) or a
    /// full object such as `{"name": "cn", "agents": 3, "landmarks": 3}`.
    #[serde(deserialize_with = "env_from_json")]
    pub env: EnvSpec,
    pub mode: ModelingMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_update_interval")]
    pub update_interval: usize,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Episodes between checkpoints; `0` keeps only the final checkpoint.
    #[serde(default)]
    pub checkpoint_interval: usize,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_alpha() -> f64 {
    0.1
}

fn default_lambda_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}

fn default_episodes() -> usize {
    5000
}

fn default_update_interval() -> usize {
    2048
}

fn default_output_dir() -> String {
    "runs".to_string()
}

fn env_from_json<'de, D: Deserializer<'de>>(d: D) -> Result<EnvSpec, D::Error> {
    use serde::de::Error;
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(name) => EnvSpec::by_name(&name).map_err(D::Error::custom),
        v @ serde_json::Value::Object(_) => EnvSpec::deserialize(v).map_err(D::Error::custom),
        other => Err(D::Error::custom(format!("env must be a name or an object, got {other}"))),
    }
}

impl ExperimentConfig {
    /// Config with every default filled in.
    pub fn new(env: EnvSpec, mode: ModelingMode, seeds: Vec<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_id: None,
            env,
            mode,
            alpha: default_alpha(),
            lambda_grid: default_lambda_grid(),
            seeds,
            episodes: default_episodes(),
            update_interval: default_update_interval(),
            ppo: PpoConfig::default(),
            classifier: ClassifierConfig::default(),
            output_dir: default_output_dir(),
            checkpoint_interval: 0,
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.env.name(), self.mode))
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        let bad = |field: &str, message: String| Err(ExpError::invalid(field, message));
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if let Some(id) = &self.run_id {
            let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && id != "." && id != "..";
            if !ok {
                return bad("run_id", format!("`{id}` must be non-empty and use only [A-Za-z0-9._-]"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda_grid", "must not be empty".into());
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return bad("lambda_grid", format!("values must be non-negative, got {l}"));
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds", "must not repeat".into());
        }
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1".into());
        }
        if self.update_interval == 0 {
            return bad("update_interval", "must be at least 1".into());
        }
        if self.output_dir.is_empty() {
            return bad("output_dir", "must not be empty".into());
        }
        self.env.validate().map_err(|e| match e {
            EnvError::InvalidParameter { field, message } => ExpError::invalid(format!("env.{field}"), message),
            other => ExpError::invalid("env", other.to_string()),
        })?;
        self.ppo.validate().map_err(|e| match e {
            PpoError::InvalidConfig { field, message } => ExpError::invalid(format!("ppo.{field}"), message),
            other => ExpError::invalid("ppo", other.to_string()),
        })?;
        self.classifier.validate().map_err(|e| match e {
            ConformalError::InvalidConfig { field, message } => ExpError::invalid(format!("classifier.{field}"), message),
            other => ExpError::invalid("classifier", other.to_string()),
        })?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            env: self.env.clone(),
            mode: self.mode,
            alpha: self.alpha,
            lambda_grid: self.lambda_grid.clone(),
            episodes: self.episodes,
            update_interval: self.update_interval,
            ppo: self.ppo.clone(),
            classifier: self.classifier.clone(),
            checkpoint_interval: self.checkpoint_interval,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Parses and validates a config held in memory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExpError> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| ExpError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExpError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExpError::io(path, e))?;
    parse_config(&text)
}
