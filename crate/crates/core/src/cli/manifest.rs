//! Run manifests written beside every command's outputs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{CliResult, Failure};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: &'a [String],
    seed: u64,
    config: &'a serde_json::Value,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<OutputEntry>,
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so reruns match byte for byte.
pub fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub struct Recorder {
    command: &'static str,
    argv: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    started: u64,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &'static str, argv: &[String], seed: u64, config: serde_json::Value) -> Self {
        Recorder { command, argv: argv.to_vec(), seed, config, started: now(), outputs: Vec::new() }
    }

    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        }
        fs::write(path, contents).map_err(|e| io_failure(path, e))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Writes a manifest listing every output into each directory that received one.
    pub fn finish(self) -> CliResult {
        let finished = now();
        let dirs: BTreeSet<PathBuf> =
            self.outputs.iter().map(|p| p.parent().map(Path::to_path_buf).unwrap_or_default()).collect();
        for dir in dirs {
            let mut outputs = Vec::new();
            for p in &self.outputs {
                let bytes = fs::read(p).map_err(|e| io_failure(p, e))?;
                outputs.push(OutputEntry {
                    path: p.display().to_string(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                });
            }
            let m = Manifest {
                tool: "superexp",
                version: env!("CARGO_PKG_VERSION"),
                command: self.command,
                argv: &self.argv,
                seed: self.seed,
                config: &self.config,
                started_unix: self.started,
                finished_unix: finished,
                outputs,
            };
            let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
            let path = dir.join(FILE_NAME);
            fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        }
        Ok(())
    }
}

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}
