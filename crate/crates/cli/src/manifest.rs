//! Run manifest and output-directory handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hypflow::format::to_json;
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Parsed settings of the run.
    pub config: serde_json::Value,
    /// Config file text as given, if any.
    pub config_text: Option<String>,
    pub resolution: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub start_time: f64,
    pub end_time: Option<f64>,
    pub status: Option<String>,
    /// Files written by the run, relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, config_text: Option<String>, resolution: String, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            config_text,
            resolution,
            seed,
            start_time: now(),
            end_time: None,
            status: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::write(dir.join("manifest.json"), to_json(self) + "\n")?;
        Ok(())
    }

    pub fn finish(&mut self, dir: &Path, status: &str) -> Result<(), CliError> {
        self.end_time = Some(now());
        self.status = Some(status.into());
        self.write(dir)
    }
}

/// Creates `<out>/<prefix>-NNNN` with the first unused index.
pub fn unique_run_dir(out: &Path, prefix: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out)?;
    for i in 1..100_000 {
        let dir = out.join(format!("{prefix}-{i:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(CliError::config(format!("no free run directory under {}", out.display())))
}

/// Writes `text` to `dir/name` and records it in the manifest.
pub fn emit(dir: &Path, manifest: &mut RunManifest, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, text)?;
    manifest.outputs.push(name.into());
    Ok(())
}
