//! Run configuration, read from a TOML file.
//!
//! Every section and key is optional; anything left out takes its default
//! and is reported by [`RunConfig::parse`] so it can be logged. Unknown keys
//! are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{PiController, PiGains};
use crate::hdp::HdpConfig;
use crate::plant::PlantParams;
use crate::sim::{Excitation, Harness, PretrainSettings, R_LOAD_RANGE, SCENARIO_NAMES, V_S_RANGE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which scenarios `compare` runs and how long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSettings {
    pub names: Vec<String>,
    /// Simulated time per run (s).
    pub duration: f64,
    /// Time of the load or input step (s).
    pub t_step: f64,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        Self {
            names: SCENARIO_NAMES.iter().map(|s| s.to_string()).collect(),
            duration: 0.05,
            t_step: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network initialisation and the training shuffles.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub plant: PlantParams,
    pub hdp: HdpConfig,
    pub pi: PiGains,
    pub pretrain: PretrainSettings,
    pub excitation: Excitation,
    pub scenarios: ScenarioSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("out"),
            plant: PlantParams::default(),
            hdp: HdpConfig::default(),
            pi: PiGains::default(),
            pretrain: PretrainSettings::default(),
            excitation: Excitation::default(),
            scenarios: ScenarioSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates `text`. Also returns `(key, value)` for every
    /// parameter the text left at its default.
    pub fn parse(text: &str) -> Result<(Self, Vec<(String, String)>), ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        let given: toml::Table = toml::from_str(text)?;
        let mut defaulted = Vec::new();
        missing_keys(&given, &Self::default().to_table(), "", &mut defaulted);
        Ok((config, defaulted))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<(String, String)>), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to a TOML table")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        self.plant.validate().map_err(|e| ConfigError::Invalid(format!("[plant] {e}")))?;
        self.hdp.validate().map_err(|e| ConfigError::Invalid(format!("[hdp] {e}")))?;
        self.pi_controller()?;

        let p = &self.pretrain;
        if !(p.critic_lr > 0.0 && p.warm_start_lr > 0.0 && p.critic_lr_decay > 0.0) {
            return invalid("[pretrain] learning rates and decay must be positive".into());
        }
        if !(p.plateau_tol >= 0.0) || p.max_epochs < 5 {
            return invalid("[pretrain] needs plateau_tol >= 0 and max_epochs >= 5".into());
        }

        let e = &self.excitation;
        if e.episodes == 0 || e.holds_per_episode == 0 || !(e.hold_time > 0.0) {
            return invalid("[excitation] needs at least one episode and hold, and hold_time > 0".into());
        }
        for (name, [lo, hi], limits) in [
            ("v_set_range", e.v_set_range, None),
            ("r_load_range", e.r_load_range, Some(R_LOAD_RANGE)),
            ("v_s_range", e.v_s_range, Some(V_S_RANGE)),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return invalid(format!("[excitation] {name} [{lo}, {hi}] must be positive and ordered"));
            }
            if let Some([a, b]) = limits {
                if lo < a || hi > b {
                    return invalid(format!("[excitation] {name} must lie within [{a}, {b}]"));
                }
            }
        }

        let s = &self.scenarios;
        if let Some(bad) = s.names.iter().find(|n| !SCENARIO_NAMES.contains(&n.as_str())) {
            return invalid(format!(
                "[scenarios] unknown scenario `{bad}`; expected one of {}",
                SCENARIO_NAMES.join(", ")
            ));
        }
        if !(s.duration > 0.0 && s.t_step > 0.0 && s.t_step < s.duration) {
            return invalid("[scenarios] needs 0 < t_step < duration".into());
        }
        Ok(())
    }

    pub fn harness(&self) -> Harness {
        Harness::new(self.plant, self.hdp.clone())
    }

    /// The PI regulator tuned for the 200 V nominal point.
    pub fn pi_controller(&self) -> Result<PiController, ConfigError> {
        PiController::from_gains(&self.pi, &self.plant, 200.0).map_err(|e| ConfigError::Invalid(format!("[pi] {e}")))
    }
}

fn missing_keys(given: &toml::Table, defaults: &toml::Table, prefix: &str, out: &mut Vec<(String, String)>) {
    let empty = toml::Table::new();
    for (key, value) in defaults {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (given.get(key), value) {
            (Some(toml::Value::Table(sub)), toml::Value::Table(d)) => missing_keys(sub, d, &path, out),
            (None, toml::Value::Table(d)) => missing_keys(&empty, d, &path, out),
            (None, v) => out.push((path, v.to_string())),
            _ => {}
        }
    }
}
