//! Flat JSON configuration with exhaustive validation: unknown keys, type
//! errors and constraint violations are all collected before failing.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use phrasenet_core::train::TrainConfig;

/// Every problem found in a configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration:")?;
        for e in &self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Overlays `text` on the defaults of `T`, reporting every unknown key and
/// every field that fails to deserialize.
pub fn parse_flat<T: Serialize + DeserializeOwned + Default>(text: &str) -> Result<T, ConfigErrors> {
    let user: Map<String, Value> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return Err(ConfigErrors(vec!["top level must be a JSON object".into()])),
        Err(e) => return Err(ConfigErrors(vec![format!("malformed JSON: {e}")])),
    };
    let Value::Object(defaults) = serde_json::to_value(T::default()).expect("config serializes") else {
        unreachable!("configs are structs")
    };
    let mut errs = Vec::new();
    let mut merged = defaults.clone();
    for (key, value) in &user {
        if !defaults.contains_key(key) {
            errs.push(format!("{key}: unknown key"));
            continue;
        }
        let mut probe = defaults.clone();
        probe.insert(key.clone(), value.clone());
        if let Err(e) = serde_json::from_value::<T>(Value::Object(probe)) {
            errs.push(format!("{key}: {e}"));
            continue;
        }
        merged.insert(key.clone(), value.clone());
    }
    if !errs.is_empty() {
        return Err(ConfigErrors(errs));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| ConfigErrors(vec![e.to_string()]))
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig, ConfigErrors> {
    let config: TrainConfig = parse_flat(text)?;
    let errs = config.validate();
    if errs.is_empty() {
        Ok(config)
    } else {
        Err(ConfigErrors(errs))
    }
}

pub fn format_config<T: Serialize>(config: &T) -> String {
    serde_json::to_string_pretty(config).expect("config serializes") + "\n"
}

pub fn load_train_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    Ok(parse_train_config(&text)?)
}
