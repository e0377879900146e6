//! Provenance file written into every output directory.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct Manifest<'a, E: Serialize> {
    pub tool: &'static str,
    pub code_version: &'static str,
    pub command: &'static str,
    pub config_hash: Option<String>,
    pub config: Option<&'a RunConfig>,
    /// Command-specific facts such as seeds and counts.
    pub details: E,
}

impl<'a, E: Serialize> Manifest<'a, E> {
    pub fn new(command: &'static str, config: Option<&'a RunConfig>, details: E) -> Self {
        Self {
            tool: "mhc",
            code_version: CODE_VERSION,
            command,
            config_hash: config.map(RunConfig::hash),
            config,
            details,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Pretty JSON with a trailing newline; creates parent directories.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(CliError::io(path))?;
    Ok(path.to_owned())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
