use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelFailure {
    pub level_id: String,
    pub error: String,
}

/// Record of one command run. `started_unix` and `duration_seconds` are the
/// only fields that change between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub started_unix: u64,
    pub duration_seconds: f64,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub failures: Vec<LevelFailure>,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> anyhow::Result<FileDigest> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let read = file
            .read(&mut buf)
            .with_context(|| format!("reading {}", path.display()))?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
        bytes += read as u64;
    }
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex(&hasher.finalize()),
        bytes,
    })
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    command: &'static str,
    started: Instant,
    started_unix: u64,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    pub failures: Vec<LevelFailure>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, config: serde_json::Value) -> Self {
        Self {
            command,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn fail(&mut self, level_id: &str, error: impl std::fmt::Display) {
        self.failures.push(LevelFailure {
            level_id: level_id.to_string(),
            error: error.to_string(),
        });
    }

    pub fn finish(mut self) -> anyhow::Result<RunManifest> {
        self.failures.sort_by(|a, b| a.level_id.cmp(&b.level_id));
        let canonical = serde_json::to_vec(&self.config)?;
        Ok(RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started_unix,
            duration_seconds: self.started.elapsed().as_secs_f64(),
            config_sha256: sha256_bytes(&canonical),
            config: self.config,
            inputs: self
                .inputs
                .iter()
                .map(|p| digest_file(p))
                .collect::<anyhow::Result<_>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|p| digest_file(p))
                .collect::<anyhow::Result<_>>()?,
            failures: self.failures,
        })
    }
}

/// `<out>.run.json` next to the main output.
pub fn default_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}
