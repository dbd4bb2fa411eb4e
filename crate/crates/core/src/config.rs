//! Layered run configuration: defaults, then a TOML file, then `key=value`
//! overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact::LegGeometry;
use crate::dynamics::{VehicleParams, WorldParams};
use crate::env::{EnvConfig, EpisodeConfig, RewardParams};
use crate::episode::ActionMode;
use crate::error::{Error, Result};
use crate::learner::SacHyperparams;
use crate::sensing::SensingConfig;
use crate::sweep::SweepGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub rolling_window: usize,
    /// Write a learner checkpoint every this many episodes; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            rolling_window: 100,
            checkpoint_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// m/s
    pub speeds: Vec<f64>,
    /// deg
    pub angles_deg: Vec<f64>,
    pub trials: usize,
    pub mode: ActionMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let g = SweepGrid::default();
        Self {
            speeds: g.speeds,
            angles_deg: g.angles_deg,
            trials: g.trials,
            mode: ActionMode::Stochastic,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            speeds: self.speeds.clone(),
            angles_deg: self.angles_deg.clone(),
            trials: self.trials,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: ActionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drawn from the clock when absent; always written to run outputs.
    pub seed: Option<u64>,
    pub vehicle: VehicleParams,
    pub world: WorldParams,
    pub legs: LegGeometry,
    pub sensing: SensingConfig,
    pub reward: RewardParams,
    pub episode: EpisodeConfig,
    pub sac: SacHyperparams,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' is malformed")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        // bare words are taken as strings
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) {
    if let [last] = path {
        table.insert(last.clone(), value);
        return;
    }
    let entry = table
        .entry(path[0].clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if !entry.is_table() {
        *entry = toml::Value::Table(toml::Table::new());
    }
    if let toml::Value::Table(t) = entry {
        set_path(t, &path[1..], value);
    }
}

impl RunConfig {
    /// Builds a config from defaults, an optional TOML file and overrides,
    /// in increasing precedence, then validates it.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match file {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
                Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
            })?),
            None => None,
        };
        Self::from_parts(text.as_deref(), overrides)
    }

    pub fn from_parts(toml_text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::default())
            .map_err(|e| Error::Config(format!("cannot serialize defaults: {e}")))?;
        if let Some(text) = toml_text {
            let file: toml::Table =
                toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
            merge(&mut table, file);
        }
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut table, &path, value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            vehicle: self.vehicle,
            world: self.world,
            legs: self.legs,
            sensing: self.sensing,
            reward: self.reward,
            episode: self.episode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env().validate()?;
        self.sac.validate()?;
        self.sweep.grid().validate()?;
        if self.train.rolling_window == 0 {
            return Err(Error::InvalidParam("train.rolling_window must be > 0".into()));
        }
        if self.seed.is_some_and(|s| s > i64::MAX as u64) {
            return Err(Error::OutOfRange("seed must fit in 63 bits".into()));
        }
        Ok(())
    }

    /// Fills in a clock-derived seed when none was given.
    pub fn resolve_seed(&mut self) -> u64 {
        *self.seed.get_or_insert_with(|| {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            nanos & (i64::MAX as u64)
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}
