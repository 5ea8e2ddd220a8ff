use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// `ok`, `failed` or `diverged`.
    pub status: String,
    pub seed: u64,
    /// Names fed to the seed derivation, in use order.
    pub seed_derivations: Vec<String>,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputFile>,
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the outputs of one command and writes the manifest last.
pub struct ManifestWriter {
    dir: PathBuf,
    command: String,
    seed: u64,
    derivations: Vec<String>,
    config: RunConfig,
    started_at: String,
    files: Vec<PathBuf>,
}

impl ManifestWriter {
    pub fn new(dir: &Path, command: &str, config: &RunConfig) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed: config.seed,
            derivations: Vec::new(),
            config: config.clone(),
            started_at: timestamp(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn derivation(&mut self, name: &str) {
        if !self.derivations.iter().any(|d| d == name) {
            self.derivations.push(name.to_string());
        }
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.track(name);
        Ok(path)
    }

    /// Registers a file some other routine wrote into the directory.
    pub fn track(&mut self, name: &str) {
        let path = self.dir.join(name);
        if !self.files.contains(&path) {
            self.files.push(path);
        }
    }

    pub fn finish(self, status: &str) -> CliResult<RunManifest> {
        let mut outputs = Vec::new();
        for path in &self.files {
            let bytes = fs::read(path)?;
            let rel = path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().replace('\\', "/");
            outputs.push(OutputFile { path: rel, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool: "fairrobust".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            status: status.into(),
            seed: self.seed,
            seed_derivations: self.derivations,
            config: self.config,
            started_at: self.started_at,
            finished_at: timestamp(),
            outputs,
        };
        fs::write(self.dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
        Ok(manifest)
    }
}
