//! The experiment configuration file.
//!
//! A config is TOML with five sections: `scenario`, `reward`, `encoder`,
//! `algorithm` and `run`. Missing keys take the defaults of the preset picked
//! by `scenario.scenario` and `algorithm.algorithm`; unknown keys are errors.
//!
//! ```
//! use gcav::config::ExperimentConfig;
//!
//! let cfg = ExperimentConfig::from_toml_str("[reward]\nw4 = -20.0\n", &["run.epochs=3"]).unwrap();
//! assert_eq!(cfg.reward.w4, -20.0);
//! assert_eq!(cfg.run.epochs, 3);
//! assert_eq!(cfg.scenario.highway_length_m, 200.0);
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::nn::EncoderSpec;
use crate::reward::RewardConfig;
use crate::rl::{AlgoConfig, Algorithm};
use crate::sim::{Scenario, ScenarioConfig};
use crate::validate::{ensure, Violation};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// The `run` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Physics steps per episode.
    pub horizon_steps: usize,
    pub out_dir: PathBuf,
    /// Epochs between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Record one greedy episode of the final policy as JSON lines.
    pub trace: bool,
    /// Parallel runs; 0 uses every available core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            epochs: 150,
            episodes_per_epoch: 10,
            horizon_steps: 600,
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
            trace: false,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Violation> {
        ensure(!self.seeds.is_empty(), "seeds", "at least one seed is required")?;
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        ensure(sorted.len() == self.seeds.len(), "seeds", "seeds must be distinct")?;
        ensure(self.episodes_per_epoch > 0, "episodes_per_epoch", "must be positive")?;
        ensure(self.horizon_steps > 0, "horizon_steps", "must be positive")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub scenario: ScenarioConfig,
    pub reward: RewardConfig,
    pub encoder: EncoderSpec,
    pub algorithm: AlgoConfig,
    pub run: RunConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("`{path}`: {message}")]
    Key { path: String, message: String },
    #[error("invalid override `{0}`; expected key=value")]
    Override(String),
    #[error(transparent)]
    Invalid(#[from] Violation),
}

impl ConfigError {
    /// The offending key path, when the error names one.
    pub fn key_path(&self) -> Option<&str> {
        match self {
            ConfigError::Key { path, .. } => Some(path),
            ConfigError::Invalid(v) => Some(&v.key),
            _ => None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for a scenario and algorithm pair.
    pub fn preset(scenario: Scenario, algorithm: Algorithm) -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            scenario: ScenarioConfig::preset(scenario),
            reward: RewardConfig::default(),
            encoder: EncoderSpec::default(),
            algorithm: AlgoConfig::for_algorithm(algorithm),
            run: RunConfig::default(),
        }
    }

    pub fn default_algorithm(scenario: Scenario) -> Algorithm {
        match scenario {
            Scenario::HighwayRamping => Algorithm::Dqn,
            Scenario::FigureEight => Algorithm::Ppo,
        }
    }

    pub fn load(path: &Path, overrides: &[&str]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, overrides)
    }

    /// Parses, applies `key=value` overrides, fills defaults and validates.
    pub fn from_toml_str(text: &str, overrides: &[&str]) -> Result<Self, ConfigError> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let scenario = pick(&user, "scenario", "scenario", Scenario::HighwayRamping)?;
        let algorithm = pick(&user, "algorithm", "algorithm", Self::default_algorithm(scenario))?;
        let mut merged = Value::try_from(Self::preset(scenario, algorithm)).expect("preset serializes");
        merge(&mut merged, Value::Table(user));
        let cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| ConfigError::Key {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Violation> {
        ensure(
            self.format_version == CONFIG_FORMAT_VERSION,
            "format_version",
            format!("unsupported version, expected {CONFIG_FORMAT_VERSION}"),
        )?;
        self.scenario.validate().map_err(|v| v.within("scenario"))?;
        self.reward.validate().map_err(|v| v.within("reward"))?;
        self.encoder.validate().map_err(|v| v.within("encoder"))?;
        self.algorithm.validate().map_err(|v| v.within("algorithm"))?;
        self.run.validate().map_err(|v| v.within("run"))?;
        let space = crate::harness::env_spec(&self.scenario).action_space;
        ensure(
            self.algorithm.algorithm.supports(space),
            "algorithm.algorithm",
            format!("{} cannot act in the {} action space", self.algorithm.algorithm, self.scenario.scenario),
        )
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn pick<T: for<'de> Deserialize<'de>>(user: &toml::Table, section: &str, key: &str, default: T) -> Result<T, ConfigError> {
    match user.get(section).and_then(|s| s.get(key)) {
        None => Ok(default),
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| ConfigError::Key {
            path: format!("{section}.{key}"),
            message: e.message().to_string(),
        }),
    }
}

/// Recursively overlays `over` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(spec.into()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p).or_insert_with(|| Value::Table(toml::Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(ConfigError::Key {
                    path: key.into(),
                    message: format!("`{p}` is not a section"),
                })
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
