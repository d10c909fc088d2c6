//! Experiment manifest: config digest, tool version, per-stage seeds and
//! content digests of every produced artifact. Contains no timestamps, so
//! identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub seed: u64,
    /// Artifact path relative to the output directory, mapped to its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    pub global_seed: u64,
    pub stages: BTreeMap<String, StageEntry>,
}

impl ExperimentManifest {
    pub fn new(config_digest: String, global_seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            global_seed,
            stages: BTreeMap::new(),
        }
    }

    /// Load the manifest in `out_dir`, starting afresh when it is missing or
    /// was written for a different config or seed.
    pub fn open(out_dir: &Path, config_digest: &str, global_seed: u64) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if path.exists() {
            let m: Self = serde_json::from_slice(&std::fs::read(&path)?)?;
            if m.config_digest == config_digest && m.global_seed == global_seed {
                return Ok(m);
            }
        }
        Ok(Self::new(config_digest.to_string(), global_seed))
    }

    /// Record a stage, digesting each artifact under `out_dir`.
    pub fn record(&mut self, out_dir: &Path, stage: &str, seed: u64, artifacts: &[String]) -> Result<()> {
        let mut map = BTreeMap::new();
        for rel in artifacts {
            map.insert(rel.clone(), file_digest(&out_dir.join(rel))?);
        }
        self.stages.insert(stage.to_string(), StageEntry { seed, artifacts: map });
        Ok(())
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        std::fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Whether every artifact recorded for `stage` still exists with its
    /// recorded digest.
    pub fn stage_is_current(&self, out_dir: &Path, stage: &str) -> bool {
        self.stages.get(stage).is_some_and(|e| {
            e.artifacts
                .iter()
                .all(|(rel, digest)| file_digest(&out_dir.join(rel)).is_ok_and(|d| &d == digest))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        let mut m = ExperimentManifest::new("cfg".into(), 1);
        m.record(dir.path(), "s", 9, &["a.txt".to_string()]).unwrap();
        assert_eq!(
            m.stages["s"].artifacts["a.txt"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(m.stage_is_current(dir.path(), "s"));
        m.save(dir.path()).unwrap();
        assert_eq!(ExperimentManifest::open(dir.path(), "cfg", 1).unwrap(), m);
        assert!(ExperimentManifest::open(dir.path(), "other", 1).unwrap().stages.is_empty());
        std::fs::write(dir.path().join("a.txt"), b"changed").unwrap();
        assert!(!m.stage_is_current(dir.path(), "s"));
    }
}
