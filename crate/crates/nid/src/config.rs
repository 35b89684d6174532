//! JSON task configs with `key=value` overrides.

use std::path::Path;

use nid_core::tasks::TaskConfig;
use serde_json::{Map, Value};

use crate::error::{IoError, Result};

pub const RESOLVED_NAME: &str = "config.resolved.json";

fn known_keys() -> Map<String, Value> {
    match serde_json::to_value(TaskConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("TaskConfig serializes to an object"),
    }
}

fn set_key(map: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    match map.get_mut(key) {
        Some(slot) => {
            *slot = value;
            Ok(())
        }
        None => Err(IoError::Config(format!("unknown config key `{key}`"))),
    }
}

/// Defaults, overlaid by the JSON object in `text` (if any), overlaid by
/// `overrides` of the form `key=value`. Values are parsed as JSON and fall
/// back to plain strings.
pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<TaskConfig> {
    let mut map = known_keys();
    if let Some(text) = text {
        let parsed: Value = serde_json::from_str(text)
            .map_err(|e| IoError::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(obj) = parsed else {
            return Err(IoError::Config("config must be a JSON object".into()));
        };
        for (k, v) in obj {
            set_key(&mut map, &k, v)?;
        }
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| IoError::Config(format!("override `{o}` is not key=value")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_key(&mut map, k.trim(), value)?;
    }
    let cfg: TaskConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| IoError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| IoError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<TaskConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| IoError::file(p, e))?),
        None => None,
    };
    resolve(text.as_deref(), overrides)
}

pub fn to_json(cfg: &TaskConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

/// Writes the resolved config into `dir`; running with it alone reproduces
/// the run.
pub fn write_resolved(dir: &Path, cfg: &TaskConfig) -> Result<()> {
    let path = dir.join(RESOLVED_NAME);
    std::fs::write(&path, to_json(cfg)).map_err(|e| IoError::file(path, e))
}
