//! Sidecar stamps recording which config and input bytes produced a stage's
//! outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub config_fingerprint: String,
    /// Path → SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn digests(paths: &[PathBuf]) -> Option<BTreeMap<String, String>> {
    paths.iter().map(|p| Some((p.display().to_string(), file_sha256(p).ok()?))).collect()
}

impl Stamp {
    pub fn collect(stage: &str, fingerprint: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> anyhow::Result<Self> {
        let hash_all = |ps: &[PathBuf]| -> anyhow::Result<BTreeMap<String, String>> {
            ps.iter()
                .map(|p| Ok((p.display().to_string(), file_sha256(p).with_context(|| format!("hashing {}", p.display()))?)))
                .collect()
        };
        Ok(Self {
            stage: stage.to_string(),
            config_fingerprint: fingerprint.to_string(),
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        })
    }

    /// True when the stamp at `path` matches the current config, inputs and
    /// outputs byte for byte.
    pub fn is_current(path: &Path, stage: &str, fingerprint: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> bool {
        let Ok(text) = std::fs::read_to_string(path) else {
            return false;
        };
        let Ok(old) = serde_json::from_str::<Stamp>(&text) else {
            return false;
        };
        old.stage == stage
            && old.config_fingerprint == fingerprint
            && digests(inputs).is_some_and(|d| d == old.inputs)
            && digests(outputs).is_some_and(|d| d == old.outputs)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
