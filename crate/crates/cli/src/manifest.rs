//! Run manifest: resolved config, seeds, timing, artifacts and metrics.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use demixgan::io::write_atomic;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Seeds};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    /// Milliseconds since the Unix epoch.
    pub started_ms: u128,
    pub finished_ms: u128,
    /// Paths relative to the run directory, sorted.
    pub artifacts: Vec<String>,
    pub code_version: String,
    pub metrics: serde_json::Value,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, CliError> {
        let path = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The manifest with timestamps zeroed, for replay comparisons.
    pub fn without_timestamps(&self) -> Self {
        Self {
            started_ms: 0,
            finished_ms: 0,
            ..self.clone()
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

/// Every file under `root` except the manifest, as sorted relative paths.
pub fn list_artifacts(root: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if rel != MANIFEST {
                    out.push(rel);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

pub struct Recorder {
    subcommand: String,
    out: PathBuf,
    seeds: Seeds,
    started_ms: u128,
}

impl Recorder {
    pub fn start(subcommand: &str, out: &Path, config: &RunConfig, seeds: &Seeds) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        let path = out.join(CONFIG_SNAPSHOT);
        write_atomic(&path, config.to_toml()?.as_bytes()).map_err(io_err(&path))?;
        Ok(Self {
            subcommand: subcommand.into(),
            out: out.to_path_buf(),
            seeds: seeds.clone(),
            started_ms: now_ms(),
        })
    }

    /// Rewrites the config snapshot (subcommands may pin fields) and
    /// writes the manifest atomically.
    pub fn finish(self, config: &RunConfig, metrics: serde_json::Value) -> Result<RunManifest, CliError> {
        let snapshot = self.out.join(CONFIG_SNAPSHOT);
        write_atomic(&snapshot, config.to_toml()?.as_bytes()).map_err(io_err(&snapshot))?;
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config: config.clone(),
            seeds: self.seeds,
            started_ms: self.started_ms,
            finished_ms: now_ms(),
            artifacts: list_artifacts(&self.out)?,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            metrics,
        };
        let path = self.out.join(MANIFEST);
        write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes()).map_err(io_err(&path))?;
        Ok(manifest)
    }
}
