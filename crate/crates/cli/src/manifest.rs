use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// The exact argument vector, enough to replay the run.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub threads: Option<usize>,
    pub duration_seconds: f64,
}

pub struct Recorder {
    command: &'static str,
    threads: Option<usize>,
    started: Instant,
}

impl Recorder {
    pub fn start(command: &'static str, threads: Option<usize>) -> Self {
        Self {
            command,
            threads,
            started: Instant::now(),
        }
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(
        self,
        path: &Path,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> Result<PathBuf> {
        let m = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: self.threads,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(path.to_path_buf())
    }
}

/// `<file>.manifest.json` beside a single-file output.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

/// `<dir>/manifest.json` inside a directory output.
pub fn inside(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
