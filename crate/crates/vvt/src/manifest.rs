//! Run manifests and the per-run-directory lock.
//!
//! `manifest.json` lists, per stage, the hash of its inputs and every file it
//! wrote with a SHA-256 digest. Paths are relative to the run directory.
//! Wall-clock timings go to `timings.json` so that the manifest itself is
//! reproducible.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VvtError};
use crate::fsio;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub stage: String,
    /// Digest over the config hash and every input file this stage read.
    pub inputs_hash: String,
    pub outputs: Vec<Artifact>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub entries: Vec<StageEntry>,
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        let versions = [
            ("vvt".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("vvt-core".to_string(), vvt_core::VERSION.to_string()),
        ]
        .into_iter()
        .collect();
        Self { format: "vvt-run-1".into(), config_hash: config_hash.into(), versions, entries: Vec::new() }
    }

    /// Loads the manifest in `run_dir`, or starts a fresh one. A manifest
    /// written under a different config hash is an error.
    pub fn open(run_dir: &Path, config_hash: &str) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let m: RunManifest = fsio::read_json(&path)?;
        if m.config_hash != config_hash {
            return Err(VvtError::HashMismatch(format!(
                "{} was written by config {}, current config is {config_hash}",
                path.display(),
                m.config_hash
            )));
        }
        Ok(m)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        for e in &self.entries {
            for a in &e.outputs {
                if !run_dir.join(&a.path).is_file() {
                    return Err(VvtError::Invalid(format!("manifest references missing file {}", a.path)));
                }
            }
        }
        fsio::write_json(&run_dir.join(MANIFEST_FILE), self)
    }

    /// Most recent entry for `stage`.
    pub fn latest(&self, stage: &str) -> Option<&StageEntry> {
        self.entries.iter().rev().find(|e| e.stage == stage)
    }

    /// True when the latest entry for `stage` was produced from the same
    /// inputs and its outputs are still on disk unchanged.
    pub fn is_fresh(&self, run_dir: &Path, stage: &str, inputs_hash: &str) -> bool {
        let Some(e) = self.latest(stage) else {
            return false;
        };
        e.inputs_hash == inputs_hash
            && e.outputs.iter().all(|a| fsio::file_sha256(&run_dir.join(&a.path)).is_ok_and(|h| h == a.sha256))
    }

    /// Appends an entry unless an identical one is already the latest.
    pub fn record(&mut self, entry: StageEntry) {
        if self.latest(&entry.stage) != Some(&entry) {
            self.entries.push(entry);
        }
    }
}

/// Hashes `files` (relative to `run_dir`) into artifacts, sorted by path.
pub fn artifacts(run_dir: &Path, files: &[PathBuf]) -> Result<Vec<Artifact>> {
    let mut out = files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(run_dir).unwrap_or(f);
            Ok(Artifact { path: rel.to_string_lossy().replace('\\', "/"), sha256: fsio::file_sha256(f)? })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Digest over a config hash and a list of files (order-sensitive).
pub fn inputs_hash(config_hash: &str, files: &[PathBuf]) -> Result<String> {
    let mut acc = String::from(config_hash);
    for f in files {
        acc.push('\n');
        acc.push_str(&fsio::file_sha256(f)?);
    }
    Ok(fsio::sha256_hex(acc.as_bytes()))
}

/// Stage durations in seconds.
pub fn record_timing(run_dir: &Path, stage: &str, seconds: f64) -> Result<()> {
    let path = run_dir.join(TIMINGS_FILE);
    let mut t: BTreeMap<String, f64> = if path.exists() { fsio::read_json(&path)? } else { BTreeMap::new() };
    t.insert(stage.to_string(), seconds);
    fsio::write_json(&path, &t)
}

/// Exclusive lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fsio::create_dir(run_dir)?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(VvtError::Locked(run_dir.to_path_buf())),
            Err(e) => Err(VvtError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
