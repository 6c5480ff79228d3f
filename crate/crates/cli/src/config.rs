//! Layered run configuration: built-in defaults, then an optional JSON
//! file, then command-line flags. The merged map is what gets persisted as
//! `resolved_config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub type Layers = Map<String, Value>;

fn object(value: Value, origin: &str) -> Result<Layers, CliError> {
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::Usage(format!("{origin} must be a JSON object"))),
    }
}

fn overlay(base: &mut Layers, top: Layers, origin: &str) -> Result<Vec<String>, CliError> {
    let mut keys = Vec::new();
    for (key, value) in top {
        if !base.contains_key(&key) {
            return Err(CliError::Usage(format!("unknown key {key:?} in {origin}")));
        }
        keys.push(key.clone());
        base.insert(key, value);
    }
    Ok(keys)
}

/// Merged configuration plus the keys set by the file or flags.
pub struct Resolved {
    pub map: Layers,
    pub explicit: Vec<String>,
}

/// Merges `defaults` (every key the command accepts, paths included) with
/// the file and the flags. Keys absent from `defaults` are rejected.
pub fn resolve(defaults: Layers, file: Option<&Path>, flags: &impl Serialize) -> Result<Resolved, CliError> {
    let mut map = defaults;
    let mut explicit = Vec::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        explicit.extend(overlay(&mut map, object(value, "config file")?, "config file")?);
    }
    let flags = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?;
    explicit.extend(overlay(&mut map, object(flags, "flags")?, "flags")?);
    Ok(Resolved { map, explicit })
}

/// Serialises `value` into a key map.
pub fn defaults_of(value: &impl Serialize) -> Layers {
    match serde_json::to_value(value).expect("configs serialise") {
        Value::Object(map) => map,
        _ => unreachable!("configs are structs"),
    }
}

/// Adds path keys (initially unset) to a default map.
pub fn with_paths(mut map: Layers, keys: &[&str]) -> Layers {
    for key in keys {
        map.insert((*key).to_string(), Value::Null);
    }
    map
}

/// Removes and returns a required path.
pub fn take_path(map: &mut Layers, key: &str) -> Result<PathBuf, CliError> {
    match map.remove(key) {
        Some(Value::String(s)) => Ok(PathBuf::from(s)),
        _ => Err(CliError::Usage(format!("--{key} is required"))),
    }
}

/// Removes and returns an optional path.
pub fn take_optional_path(map: &mut Layers, key: &str) -> Result<Option<PathBuf>, CliError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
        Some(other) => Err(CliError::Usage(format!("{key} must be a path, got {other}"))),
    }
}

/// Deserialises what remains of the map into a library config.
pub fn parse<T: DeserializeOwned>(map: Layers) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}
