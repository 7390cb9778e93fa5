//! Run manifests: a config echo written before any result, then rewritten
//! with the SHA-256 of every artifact once they exist.

use std::fs;
use std::path::{Path, PathBuf};

use latent_events::{Error, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct ManifestFile<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Value,
    artifacts: &'a [Artifact],
}

pub struct Manifest {
    path: PathBuf,
    command: &'static str,
    config: Value,
    artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Manifest {
    /// Writes the config echo to `path` immediately.
    pub fn begin(path: PathBuf, command: &'static str, config: Value) -> Result<Self> {
        let m = Self {
            path,
            command,
            config,
            artifacts: Vec::new(),
        };
        m.flush()?;
        Ok(m)
    }

    fn flush(&self) -> Result<()> {
        let file = ManifestFile {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
            artifacts: &self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::json("manifest", e))?;
        text.push('\n');
        write_bytes(&self.path, text.as_bytes())
    }

    /// Writes an artifact and records its hash.
    pub fn emit(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_bytes(path, bytes)?;
        log::info!("wrote {}", path.display());
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.artifacts.push(Artifact {
            path: name,
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
        text.push('\n');
        self.emit(path, text.as_bytes())
    }

    pub fn finish(self) -> Result<()> {
        self.flush()
    }
}
