//! Run manifests: a JSON record of the resolved flags, seeds, tool version,
//! and input hashes of one subcommand invocation. All maps are ordered and
//! nothing time- or host-dependent is recorded, so a manifest (and every
//! other output) is byte-identical across reruns.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;

use fei_core::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub resolved_flags: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub tool_version: String,
    pub input_hashes: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            resolved_flags: BTreeMap::new(),
            seeds: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input_hashes: BTreeMap::new(),
        }
    }

    /// Records one resolved flag under its long name.
    pub fn flag(&mut self, name: &str, value: impl Display) -> &mut Self {
        self.resolved_flags.insert(name.to_string(), value.to_string());
        self
    }

    /// Records one named seed.
    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    /// Hashes one input file under the flag it came from.
    pub fn hash_input(&mut self, name: &str, path: &Path) -> Result<&mut Self> {
        self.input_hashes
            .insert(name.to_string(), sha256_file(path)?);
        Ok(self)
    }

    /// Writes `manifest.json` into a directory. Written after the primary
    /// outputs, so its presence implies a complete run.
    pub fn write_into(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

/// SHA-256 of a file's bytes as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
