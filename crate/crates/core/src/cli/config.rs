use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::ScheduleConfig;
use crate::error::{Result, SabrError};
use crate::eval::EvalConfig;
use crate::geometry::BodySpec;
use crate::model::{motion_groups, ModelConfig};
use crate::train::TrainConfig;
use crate::world::WorldConfig;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

/// Model size: a named preset with optional overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub width: Option<usize>,
    pub heads: Option<usize>,
    pub blocks: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "desk".into(),
            width: None,
            heads: None,
            blocks: None,
        }
    }
}

impl ModelSection {
    /// Model for data generated under `world` with the bundled body.
    pub fn build(&self, world: &WorldConfig, body: &BodySpec) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(
            &self.preset,
            motion_groups(body.n_joints, body.shape_dim),
            world.cond_width,
        )?;
        cfg.max_frames = world.max_frames;
        cfg.width = self.width.unwrap_or(cfg.width);
        cfg.heads = self.heads.unwrap_or(cfg.heads);
        cfg.blocks = self.blocks.unwrap_or(cfg.blocks);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The one configuration shared by every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SabrConfig {
    /// Dataset generation seed.
    pub seed: u64,
    pub deterministic: bool,
    pub world: WorldConfig,
    pub model: ModelSection,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for SabrConfig {
    fn default() -> Self {
        SabrConfig {
            seed: 0,
            deterministic: false,
            world: WorldConfig::desk(),
            model: ModelSection::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                ema_decay: 0.99,
                ..TrainConfig::desk()
            },
            eval: EvalConfig::default(),
        }
    }
}

/// Why a configuration could not be assembled.
#[derive(Debug)]
pub enum ConfigError {
    /// Unknown key or malformed override: a usage error.
    Usage(String),
    Domain(SabrError),
}

impl From<SabrError> for ConfigError {
    fn from(e: SabrError) -> Self {
        ConfigError::Domain(e)
    }
}

/// Loads `file` (or the defaults), applies dotted `overrides` in order and the
/// global seed, then validates.
pub fn assemble(
    file: Option<&Path>,
    overrides: &[(String, String)],
    seed: Option<u64>,
    deterministic: bool,
) -> std::result::Result<SabrConfig, ConfigError> {
    let mut value = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| SabrError::io(p, e))?;
            let v: Value =
                serde_json::from_str(&text).map_err(|e| SabrError::format(p, e.to_string()))?;
            serde_json::from_value::<SabrConfig>(v.clone())
                .map_err(|e| ConfigError::Usage(format!("{}: {e}", p.display())))?;
            v
        }
        None => serde_json::to_value(SabrConfig::default()).map_err(SabrError::from)?,
    };
    let defaults = serde_json::to_value(SabrConfig::default()).map_err(SabrError::from)?;
    for (key, raw) in overrides {
        set_path(&mut value, &defaults, key, raw)?;
    }
    let mut cfg: SabrConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::Usage(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.seed = s;
        cfg.eval.seed = s;
    }
    cfg.deterministic |= deterministic;
    cfg.train.schedule = cfg.schedule;
    cfg.world.validate()?;
    cfg.train.validate()?;
    cfg.eval.validate()?;
    cfg.schedule.build()?;
    Ok(cfg)
}

fn set_path(
    value: &mut Value,
    defaults: &Value,
    key: &str,
    raw: &str,
) -> std::result::Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = value;
    let mut schema = Some(defaults);
    for (i, part) in parts.iter().enumerate() {
        schema = schema.and_then(|s| s.get(part));
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::Usage(format!("--{key}: '{part}' is not a section")))?;
        if schema.is_none() && !obj.contains_key(*part) {
            return Err(ConfigError::Usage(format!(
                "unknown configuration key --{key}"
            )));
        }
        if i + 1 == parts.len() {
            let parsed =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

pub fn write_effective(cfg: &SabrConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| SabrError::io(&path, e))
}
