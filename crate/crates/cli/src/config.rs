//! Layered run configuration: command-line flag > JSON config file >
//! built-in default. Unknown keys in the file are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use corticast_core::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub task: Option<String>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub hidden_units: Option<usize>,
    pub n_blocks: Option<usize>,
    pub folds: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::invalid(format!("config {}: {e}", path.display()))
        })
    }
}

/// flag > config file > default.
pub fn resolve<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like `resolve` but with no default: the value must come from a flag or
/// the config file.
pub fn require<T: Clone>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| Error::invalid(format!("missing required value: {name}")))
}
