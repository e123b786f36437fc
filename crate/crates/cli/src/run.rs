//! Run directories and manifests.
//!
//! Every invocation writes into a fresh `{command}-{UTC timestamp}`
//! directory under the output root and never touches existing files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use kdlens::{Error, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const OUTPUT_ENV: &str = "KDLENS_OUT";

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Wall-clock measurements; excluded from reproducibility comparisons.
    pub timing: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    toolkit: &'static str,
    version: &'static str,
    command: &'a str,
    started_at: String,
    finished_at: String,
    config_sha256: String,
    config: &'a RunConfig,
    artifacts: &'a [Artifact],
    headline: &'a Value,
}

pub struct Run {
    pub dir: PathBuf,
    command: String,
    started: DateTime<Utc>,
    artifacts: Vec<Artifact>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// `--out`, then `output_dir` from the config, then `$KDLENS_OUT`, then `runs`.
pub fn output_root(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

impl Run {
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        let started = Utc::now();
        let stem = format!("{command}-{}", started.format("%Y%m%dT%H%M%SZ"));
        for attempt in 0.. {
            let name = if attempt == 0 { stem.clone() } else { format!("{stem}-{attempt}") };
            let dir = root.join(name);
            match fs::create_dir(&dir) {
                Ok(()) => {
                    return Ok(Self {
                        dir,
                        command: command.to_string(),
                        started,
                        artifacts: Vec::new(),
                    })
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&dir, e)),
            }
        }
        unreachable!()
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn put(&mut self, rel: &str, bytes: &[u8], timing: bool) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let mut file = fs::File::create_new(&path).map_err(|e| io_err(&path, e))?;
        file.write_all(bytes).map_err(|e| io_err(&path, e))?;
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
            timing,
        });
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        self.put(rel, bytes.as_ref(), false)
    }

    pub fn write_timing(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        self.put(rel, bytes.as_ref(), true)
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Re-hashes every artifact on disk, then writes `manifest.json`.
    pub fn finish(self, config: &RunConfig, headline: Value) -> Result<PathBuf> {
        for a in &self.artifacts {
            let path = self.path(&a.path);
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Data(format!("artifact {} changed while the run was writing", a.path)));
            }
        }
        let manifest = Manifest {
            toolkit: "kdlens",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            started_at: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            config_sha256: config.sha256(),
            config,
            artifacts: &self.artifacts,
            headline: &headline,
        };
        let path = self.path(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let mut file = fs::File::create_new(&path).map_err(|e| io_err(&path, e))?;
        file.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}
