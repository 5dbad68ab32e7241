//! Run configuration: one TOML tree for every subcommand, with dotted-key
//! overrides and a content hash of the resolved result.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ddpg::{ReferenceSchedule, RewardConfig, TrainConfig};
use crate::eval::EpiParams;
use crate::model::{GreenhouseModel, DEFAULT_SAMPLE_PERIOD};
use crate::mpc::MpcConfig;
use crate::weather::{ColumnMap, WeatherProfile};

/// Environment variable naming the directory that relative output paths
/// are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "GREENHOUSE_OUTPUT_ROOT";

/// Name of the resolved configuration written next to every output.
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

/// Steps per simulated day at the default sample period.
pub const STEPS_PER_DAY: usize = 96;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("override `{0}` must look like key=value")]
    Override(String),
    #[error("override `{key}`: {message}")]
    OverridePath { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherConfig {
    pub source: WeatherSource,
    /// Weather file for the `csv` source.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Seed of the synthetic scenario weather.
    pub seed: u64,
    pub profile: WeatherProfile,
    /// Controller sample period (s); weather is resampled to it.
    pub sample_period: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            source: WeatherSource::Synthetic,
            path: None,
            columns: ColumnMap::default(),
            seed: 0,
            profile: WeatherProfile::default(),
            sample_period: DEFAULT_SAMPLE_PERIOD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub days: usize,
    /// Input held over the whole run.
    pub input: [f64; 3],
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { days: 1, input: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub schedule: ReferenceSchedule,
    /// Days of synthetic training weather.
    pub pool_days: usize,
    /// Seed of the synthetic training weather.
    pub pool_seed: u64,
    /// Trained agent used by `compare`; trained from scratch when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            reward: RewardConfig::default(),
            schedule: ReferenceSchedule::default(),
            pool_days: 10,
            pool_seed: 1,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Comparison length in days.
    pub days: usize,
    /// Run the whole growing cycle instead of `days`.
    pub full_cycle: bool,
    pub cycle_days: usize,
    pub epi: EpiParams,
    pub plots: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            days: 3,
            full_cycle: false,
            cycle_days: 40,
            epi: EpiParams::default(),
            plots: true,
        }
    }
}

impl EvalConfig {
    pub fn scenario_days(&self) -> usize {
        if self.full_cycle {
            self.cycle_days
        } else {
            self.days
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of agent initialization and training.
    pub seed: u64,
    /// Output directory; relative paths are resolved against
    /// `$GREENHOUSE_OUTPUT_ROOT` when set.
    pub output_dir: PathBuf,
    pub model: GreenhouseModel,
    pub weather: WeatherConfig,
    pub simulate: SimulateConfig,
    pub mpc: MpcConfig,
    pub ddpg: DdpgConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            model: GreenhouseModel::default(),
            weather: WeatherConfig::default(),
            simulate: SimulateConfig::default(),
            mpc: MpcConfig::default(),
            ddpg: DdpgConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Read `path` (defaults when `None`), apply `key=value` overrides in
    /// order and validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let (mut table, origin) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })?;
                let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                (table, p.display().to_string())
            }
            None => (toml::Table::new(), "<defaults>".to_string()),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin,
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// SHA-256 of the resolved TOML, hex encoded. The output directory is
    /// left out since it does not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.mpc.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.ddpg.train.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.eval.epi.validate() {
            return invalid(e.to_string());
        }
        if !(self.weather.sample_period.is_finite() && self.weather.sample_period > 0.0) {
            return invalid("weather.sample_period must be positive".into());
        }
        if self.weather.source == WeatherSource::Csv && self.weather.path.is_none() {
            return invalid("weather.path is required for the csv source".into());
        }
        if self.simulate.days == 0 || self.eval.scenario_days() == 0 || self.ddpg.pool_days == 0 {
            return invalid("day counts must be positive".into());
        }
        Ok(())
    }

    /// Output directory after applying the output-root variable.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Steps per day at the configured sample period.
    pub fn steps_per_day(&self) -> usize {
        (86_400.0 / self.weather.sample_period).round() as usize
    }
}

/// Set the dotted `key` in `table` to `value`, parsed as a TOML value when
/// possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if key.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
            key: key.to_string(),
            message: format!("`{part}` is not a table"),
        })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
