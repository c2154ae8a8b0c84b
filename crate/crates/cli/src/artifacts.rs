//! Output directory handling: lock file, artifact writes and stage manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const LOCK_NAME: &str = ".gpsid.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Exclusive hold on an output directory; released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join(LOCK_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => {
                let _ = fs::write(&path, std::process::id().to_string());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("output directory {} is locked by another run (remove {} if stale)", dir.display(), path.display())
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    stage_seed: Option<u64>,
    config_sha256: &'a str,
    threads: Option<usize>,
    wall_time_s: f64,
    /// File name to sha256, in name order.
    artifacts: &'a BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    inputs: &'a BTreeMap<String, String>,
}

/// Collects the artifacts one command writes and records them in
/// `manifest.<command>.json`.
pub struct Stage {
    pub dir: PathBuf,
    pub command: &'static str,
    pub seed: u64,
    pub stage_seed: Option<u64>,
    pub config_sha256: String,
    pub threads: Option<usize>,
    started: Instant,
    written: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    _lock: OutputLock,
}

impl Stage {
    pub fn begin(dir: &Path, command: &'static str, seed: u64, config_sha256: String, threads: Option<usize>) -> Result<Self> {
        let lock = OutputLock::acquire(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            seed,
            stage_seed: None,
            config_sha256,
            threads,
            started: Instant::now(),
            written: BTreeMap::new(),
            inputs: BTreeMap::new(),
            _lock: lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of an artifact from an earlier stage, or a "missing artifact" error.
    pub fn require(&mut self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            bail!("missing artifact {} (run `gpsid {producer}` first)", p.display());
        }
        self.inputs.insert(name.to_string(), sha256_file(&p)?);
        Ok(p)
    }

    pub fn note_input(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        self.inputs.insert(name.to_string(), sha256_file(&p)?);
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.written.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(p)
    }

    /// Registers a file written by library code.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let h = sha256_file(&self.path(name))?;
        self.written.insert(name.to_string(), h);
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            stage_seed: self.stage_seed,
            config_sha256: &self.config_sha256,
            threads: self.threads,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            artifacts: &self.written,
            inputs: &self.inputs,
        };
        let p = self.dir.join(format!("manifest.{}.json", self.command));
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}
