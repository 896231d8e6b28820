//! Run configuration: built-in defaults, deep-merged with an optional TOML
//! file, then with `key.path=value` overrides; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::{ModelConfig, SIZE_BUDGET_BYTES};
use crate::quantize::QuantMode;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

pub const SNAPSHOT_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizeConfig {
    pub mode: QuantMode,
    /// Clips per calibration batch.
    pub calibration_batch: usize,
    pub size_limit_bytes: usize,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        Self { mode: QuantMode::Full, calibration_batch: 32, size_limit_bytes: SIZE_BUDGET_BYTES }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub quantize: QuantizeConfig,
    pub synth: SynthConfig,
}

/// One invocation: command, config file, overrides and output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub command: String,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn resolve(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        resolve(text.as_deref(), &self.overrides)
    }
}

fn encode(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot encode configuration: {e}")))
}

pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let mut tree: Value = toml::from_str(&encode(&RunConfig::default())?)
        .map_err(|e| Error::Config(format!("default configuration does not round-trip: {e}")))?;
    if let Some(text) = file {
        let user: Value = toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        merge(&mut tree, user);
    }
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: RunConfig = tree.try_into().map_err(|e| Error::Config(e.to_string()))?;
    cfg.train.validate()?;
    cfg.model.validate()?;
    cfg.features.validate()?;
    cfg.synth.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    Some(slot) => *slot = coerce(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Integers written where the default is a float become floats.
fn coerce(old: &Value, new: Value) -> Value {
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it does not parse.
pub fn apply_override(tree: &mut Value, text: &str) -> Result<()> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} has an empty component")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut node = tree;
    for part in &path[..path.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table")))?;
        node = table.entry(part.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table")))?;
    let last = path[path.len() - 1].to_string();
    let value = match table.get(&last) {
        Some(old) => coerce(old, value),
        None => value,
    };
    table.insert(last, value);
    Ok(())
}

pub fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(SNAPSHOT_FILE);
    std::fs::write(&path, encode(cfg)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
