use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to replay a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
}

pub fn timestamp() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

/// Shared context of one invocation.
pub struct Run {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    started: String,
}

impl Run {
    pub fn new(command: &'static str, seed: Option<u64>, out: Option<PathBuf>, force: bool) -> Self {
        Self {
            command,
            seed,
            out,
            force,
            started: timestamp(),
        }
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("{} needs an output directory (--out)", self.command)))
    }

    /// Creates the output directory; a non-empty one is only reused with --force.
    pub fn prepare_out(&self) -> Result<Option<&Path>> {
        let Some(dir) = self.out.as_deref() else {
            return Ok(None);
        };
        if dir.exists() {
            let mut entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
            if entries.next().is_some() && !self.force {
                return Err(CliError::Config(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Some(dir))
    }

    pub fn write_manifest(&self, config: Value, seed: u64, inputs: Vec<PathBuf>, artifacts: Vec<PathBuf>) -> Result<()> {
        let Some(dir) = self.out.as_deref() else {
            return Ok(());
        };
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: std::env::args().collect(),
            config,
            seed,
            inputs,
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started.clone(),
            finished: timestamp(),
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn check_version(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(spfno_core::Error::VersionMismatch { found, expected }.into());
    }
    Ok(())
}
