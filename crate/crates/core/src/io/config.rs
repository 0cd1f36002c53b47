//! JSON experiment configuration with full defaults and strict keys.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;

fn from_json_error(e: &serde_json::Error) -> Error {
    let full = e.to_string();
    // serde_json appends " at line L column C"; keep the bare message
    let message = match full.rfind(" at line ") {
        Some(i) => full[..i].to_string(),
        None => full.clone(),
    };
    if let Some(rest) = message.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return Error::UnknownKey {
                key: rest[..end].to_string(),
                line: e.line(),
            };
        }
    }
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message,
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| from_json_error(&e))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Pretty JSON with every default spelled out.
pub fn config_to_json(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config types always serialize")
}
