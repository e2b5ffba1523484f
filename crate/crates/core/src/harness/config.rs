//! Experiment configuration: `key = value` lines grouped under `[section]`
//! headers. `#` and `;` start comments. Command-line overrides use
//! `section.key=value`.
//!
//! ```text
//! [experiment]
//! mode = proposed
//! seed = 7
//! episodes = 2000
//! out = runs/factory
//!
//! [env]
//! name = factory
//! goal_periods = 10
//! goal_period = 40
//!
//! [ppo]
//! learning_rate = 1e-4
//! hidden = 256,256
//!
//! [marl]
//! goal_dim = 4
//! gsf_stride = 3
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::env::{EnvKind, FactoryConfig, LogisticsConfig, PreyConfig};
use crate::orchestrator::{RunMode, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("unknown environment `{0}` (expected factory, logistics or prey)")]
    UnknownEnv(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Parsed `section.key → value` pairs, before interpretation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut section = String::new();
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                    line: n + 1,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_ascii_lowercase();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse { line: n + 1, message: format!("expected `key = value`, got `{line}`") })?;
            if section.is_empty() {
                return Err(ConfigError::Parse { line: n + 1, message: "key outside of a section".into() });
            }
            entries.insert(format!("{section}.{}", k.trim().to_ascii_lowercase()), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Applies a `section.key=value` override.
    pub fn set_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line: 0, message: format!("override `{spec}` is not key=value") })?;
        let key = k.trim().to_ascii_lowercase();
        if !key.contains('.') {
            return Err(ConfigError::UnknownKey(key));
        }
        self.entries.insert(key, v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub eval_episodes: usize,
    pub bins: usize,
    pub window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Factory(FactoryConfig::default()),
            train: TrainConfig::default(),
            out: PathBuf::from("out"),
            eval_episodes: 1000,
            bins: 30,
            window: 100,
        }
    }
}

const KEYS: &[&str] = &[
    "experiment.mode",
    "experiment.seed",
    "experiment.episodes",
    "experiment.out",
    "experiment.eval_episodes",
    "experiment.bins",
    "experiment.window",
    "env.name",
    "env.goal_period",
    "env.goal_periods",
    "env.episode_length",
    "env.grid_size",
    "env.predators",
    "env.max_steps",
    "env.leash",
    "env.wander_steps",
    "ppo.learning_rate",
    "ppo.clip_epsilon",
    "ppo.gamma",
    "ppo.gae_lambda",
    "ppo.entropy_coef",
    "ppo.value_coef",
    "ppo.batch_size",
    "ppo.epochs",
    "ppo.max_grad_norm",
    "ppo.normalize_advantages",
    "ppo.hidden",
    "marl.goal_dim",
    "marl.gsf_stride",
    "marl.leader_full_state",
    "marl.disable_leader",
    "marl.disable_rgd",
];

fn value<T: FromStr>(raw: &RawConfig, key: &str, slot: &mut T) -> Result<(), ConfigError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = raw.get(key) {
        *slot = v.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
            key: key.into(),
            value: v.into(),
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

fn invalid(key: &str, value: impl ToString, reason: &str) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), value: value.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        if let Some(k) = raw.entries.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        let mut cfg = ExperimentConfig::default();
        let t = &mut cfg.train;
        if let Some(m) = raw.get("experiment.mode") {
            t.mode = m.parse::<RunMode>().map_err(|e| invalid("experiment.mode", m, &e.to_string()))?;
        }
        value(raw, "experiment.seed", &mut t.seed)?;
        value(raw, "experiment.episodes", &mut t.episodes)?;
        value(raw, "experiment.out", &mut cfg.out)?;
        value(raw, "experiment.eval_episodes", &mut cfg.eval_episodes)?;
        value(raw, "experiment.bins", &mut cfg.bins)?;
        value(raw, "experiment.window", &mut cfg.window)?;

        let p = &mut t.ppo;
        value(raw, "ppo.learning_rate", &mut p.learning_rate)?;
        value(raw, "ppo.clip_epsilon", &mut p.clip_epsilon)?;
        value(raw, "ppo.gamma", &mut p.gamma)?;
        value(raw, "ppo.gae_lambda", &mut p.gae_lambda)?;
        value(raw, "ppo.entropy_coef", &mut p.entropy_coef)?;
        value(raw, "ppo.value_coef", &mut p.value_coef)?;
        value(raw, "ppo.batch_size", &mut p.batch_size)?;
        value(raw, "ppo.epochs", &mut p.epochs_per_update)?;
        value(raw, "ppo.normalize_advantages", &mut p.normalize_advantages)?;
        if let Some(v) = raw.get("ppo.max_grad_norm") {
            p.max_grad_norm = match v {
                "none" | "off" => None,
                _ => Some(v.parse().map_err(|_| invalid("ppo.max_grad_norm", v, "expected a number or `none`"))?),
            };
        }
        if let Some(v) = raw.get("ppo.hidden") {
            t.hidden = v
                .split(',')
                .map(|w| w.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| invalid("ppo.hidden", v, "expected comma-separated widths"))?;
        }
        value(raw, "marl.goal_dim", &mut t.goal_dim)?;
        value(raw, "marl.gsf_stride", &mut t.gsf_stride)?;
        value(raw, "marl.leader_full_state", &mut t.leader_full_state)?;
        value(raw, "marl.disable_leader", &mut t.disable_leader)?;
        value(raw, "marl.disable_rgd", &mut t.disable_rgd)?;

        cfg.env = match raw.get("env.name").unwrap_or("factory") {
            "factory" => {
                let mut c = FactoryConfig::default();
                value(raw, "env.goal_periods", &mut c.goal_periods)?;
                value(raw, "env.goal_period", &mut c.period_length)?;
                EnvKind::Factory(c)
            }
            "logistics" => {
                let mut c = LogisticsConfig::default();
                value(raw, "env.episode_length", &mut c.episode_length)?;
                value(raw, "env.goal_period", &mut c.goal_period)?;
                EnvKind::Logistics(c)
            }
            "prey" => {
                let mut c = PreyConfig::default();
                value(raw, "env.grid_size", &mut c.grid_size)?;
                value(raw, "env.predators", &mut c.predators)?;
                value(raw, "env.max_steps", &mut c.max_steps)?;
                value(raw, "env.goal_period", &mut c.goal_period)?;
                value(raw, "env.leash", &mut c.leash)?;
                value(raw, "env.wander_steps", &mut c.wander_steps)?;
                EnvKind::Prey(c)
            }
            other => return Err(ConfigError::UnknownEnv(other.to_string())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| invalid("config", "", &e.to_string()))?;
        if self.bins == 0 {
            return Err(invalid("experiment.bins", self.bins, "must be positive"));
        }
        if self.window == 0 {
            return Err(invalid("experiment.window", self.window, "must be positive"));
        }
        self.env.build().map_err(|e| invalid("env", self.env.name(), &e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let text = "
            # factory run
            [experiment]
            mode = srm   ; baseline
            seed = 7
            [env]
            name = factory
            goal_periods = 5
            goal_period = 40
            [ppo]
            hidden = 64, 64
            max_grad_norm = none
        ";
        let mut raw = RawConfig::parse(text).unwrap();
        raw.set_override("experiment.seed=9").unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.train.mode, RunMode::Srm);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.hidden, vec![64, 64]);
        assert_eq!(cfg.train.ppo.max_grad_norm, None);
        assert_eq!(cfg.env, EnvKind::Factory(FactoryConfig { goal_periods: 5, period_length: 40 }));
    }

    #[test]
    fn defaults_follow_the_experiment_table() {
        let cfg = ExperimentConfig::from_raw(&RawConfig::default()).unwrap();
        assert_eq!(cfg.train.ppo.gamma, 0.99);
        assert_eq!(cfg.train.gsf_stride, 3);
        assert_eq!(cfg.train.goal_dim, 4);
        assert_eq!(cfg.bins, 30);
        assert_eq!(cfg.window, 100);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RawConfig::parse("seed = 1"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(RawConfig::parse("[a\nx=1"), Err(ConfigError::Parse { .. })));
        assert!(matches!(RawConfig::parse("[a]\nnothing"), Err(ConfigError::Parse { line: 2, .. })));
        let raw = RawConfig::parse("[experiment]\nsed = 1").unwrap();
        assert!(matches!(ExperimentConfig::from_raw(&raw), Err(ConfigError::UnknownKey(_))));
        let raw = RawConfig::parse("[env]\nname = mars").unwrap();
        assert!(matches!(ExperimentConfig::from_raw(&raw), Err(ConfigError::UnknownEnv(_))));
        let raw = RawConfig::parse("[ppo]\ngamma = 1.5").unwrap();
        assert!(matches!(ExperimentConfig::from_raw(&raw), Err(ConfigError::InvalidValue { .. })));
        let raw = RawConfig::parse("[experiment]\nseed = -3").unwrap();
        assert!(matches!(ExperimentConfig::from_raw(&raw), Err(ConfigError::InvalidValue { .. })));
    }
}
