//! A workspace is a directory of named artifacts plus `manifest.json`, which
//! records for every artifact the hash of the configuration that produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub stage: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, Entry>,
}

/// Hex SHA-256 of the parts, each prefixed by its length so that
/// concatenations cannot collide.
pub fn hash_parts(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
    force: bool,
}

impl Workspace {
    pub fn open(root: &Path, force: bool) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?
        } else {
            Manifest::default()
        };
        Ok(Workspace { root: root.to_path_buf(), manifest, force })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path of an input artifact, after checking that it exists and was
    /// built from configuration hash `expected` (skipped with `--force`).
    pub fn require(&self, name: &str, expected: &str, stage: &'static str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(Error::Missing { artifact: name.to_string(), stage });
        }
        if !self.force {
            match self.manifest.artifacts.get(name) {
                Some(e) if e.config_hash == expected => {}
                _ => return Err(Error::Stale { artifact: name.to_string(), stage }),
            }
        }
        Ok(path)
    }

    /// Whether `name` exists and is recorded with hash `expected`.
    pub fn is_fresh(&self, name: &str, expected: &str) -> bool {
        self.path(name).is_file() && self.manifest.artifacts.get(name).is_some_and(|e| e.config_hash == expected)
    }

    pub fn record(&mut self, name: &str, hash: &str, stage: &str) -> Result<()> {
        self.manifest
            .artifacts
            .insert(name.to_string(), Entry { stage: stage.to_string(), config_hash: hash.to_string() });
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest always serialises");
        write_atomic(&self.path(MANIFEST), text.as_bytes())
    }

    /// Recorded artifact names starting with `prefix` and ending with `suffix`.
    pub fn artifacts_matching(&self, prefix: &str, suffix: &str) -> Vec<String> {
        self.manifest
            .artifacts
            .keys()
            .filter(|k| k.starts_with(prefix) && k.ends_with(suffix) && self.path(k).is_file())
            .cloned()
            .collect()
    }
}
