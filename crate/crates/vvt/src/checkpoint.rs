//! Model checkpoints: a JSON manifest plus one raw little-endian payload.
//!
//! Payload values are `f64` so that save/load is bit-exact for the `f64`
//! parameters the model trains.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vvt_core::dit::{Dit, DitConfig};

use crate::error::{Result, VvtError};
use crate::fsio;

pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub name: String,
    /// Element offset into the payload.
    pub offset: usize,
    pub shape: [usize; 2],
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub payload: String,
    pub config_hash: String,
    pub model: DitConfig,
    pub groups: Vec<GroupEntry>,
}

pub fn save(dir: &Path, model: &Dit, config_hash: &str) -> Result<()> {
    let mut payload = Vec::new();
    let mut groups = Vec::new();
    let mut offset = 0;
    for g in model.store.groups() {
        groups.push(GroupEntry { name: g.name.clone(), offset, shape: [g.rows, g.cols], trainable: g.trainable });
        for v in &g.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += g.data.len();
    }
    let manifest = CheckpointManifest {
        format: "vvt-checkpoint-1".into(),
        dtype: "f64".into(),
        payload: PAYLOAD.into(),
        config_hash: config_hash.into(),
        model: model.config.clone(),
        groups,
    };
    fsio::write(&dir.join(PAYLOAD), &payload)?;
    fsio::write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    fsio::read_json(&dir.join(MANIFEST))
}

/// Rebuilds the model from its stored config and overwrites every group.
pub fn load(dir: &Path) -> Result<(Dit, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(&manifest.payload);
    let bytes = fsio::read(&path)?;
    let mut model = Dit::new(manifest.model.clone())?;
    if model.store.len() != manifest.groups.len() {
        return Err(VvtError::format(&path, "group count does not match the model"));
    }
    for (g, e) in model.store.groups_mut().iter_mut().zip(&manifest.groups) {
        if g.name != e.name || [g.rows, g.cols] != e.shape {
            return Err(VvtError::format(&path, format!("group {} does not match the model", e.name)));
        }
        let start = e.offset * 8;
        let end = start + g.data.len() * 8;
        let raw = bytes
            .get(start..end)
            .ok_or_else(|| VvtError::format(&path, format!("payload too short for {}", e.name)))?;
        for (v, b) in g.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
        g.trainable = e.trainable;
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = DitConfig::video(16, 4, 768, 32);
        cfg.width = 16;
        cfg.heads = 2;
        cfg.head_init = 1.0;
        let mut m = Dit::new(cfg).unwrap();
        for g in m.store.groups_mut() {
            for (i, v) in g.data.iter_mut().enumerate() {
                *v += (i as f64).sin() * 1e-3;
            }
        }
        save(dir.path(), &m, "abc").unwrap();
        let (back, manifest) = load(dir.path()).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(manifest.config_hash, "abc");
    }
}
