//! Artifact directory access and content hashing.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const CACHE_DIR: &str = ".cache";
/// Files that describe a particular invocation rather than the experiment.
pub const RUN_LOCAL: [&str; 2] = ["manifest.json", "run_summary.json"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a sequence of labelled parts; the labels keep parts from sliding into each other.
pub fn content_key(parts: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (label, bytes) in parts {
        h.update(label.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    pub fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, bytes)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    pub fn read_to_string(&self, rel: &str) -> Result<String> {
        let p = self.path(rel);
        fs::read_to_string(&p).map_err(|e| missing_or_io(e, p))
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        Ok(serde_json::from_str(&self.read_to_string(rel)?)?)
    }

    /// Fails with `MissingArtifact` unless `rel` exists.
    pub fn require(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    }

    /// Removes a stage directory so stale files from earlier configurations cannot linger.
    pub fn reset_dir(&self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        match fs::remove_dir_all(&p) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        fs::create_dir_all(p)?;
        Ok(())
    }

    pub fn stamp(&self, stage: &str) -> Option<String> {
        fs::read_to_string(self.path(&format!("{CACHE_DIR}/{stage}.key"))).ok()
    }

    pub fn set_stamp(&self, stage: &str, key: &str) -> Result<()> {
        self.write(&format!("{CACHE_DIR}/{stage}.key"), key)
    }

    pub fn clear_stamp(&self, stage: &str) -> Result<()> {
        match fs::remove_file(self.path(&format!("{CACHE_DIR}/{stage}.key"))) {
            Err(e) if e.kind() != ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Every experiment artifact with its hash, sorted by path.
    pub fn inventory(&self) -> Result<Vec<Artifact>> {
        let mut out = Vec::new();
        collect(&self.root, &self.root, &mut out)?;
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }
}

fn missing_or_io(e: std::io::Error, p: PathBuf) -> Error {
    if e.kind() == ErrorKind::NotFound {
        Error::MissingArtifact(p)
    } else {
        e.into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<Artifact>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let p = entry.path();
        let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
        if rel == CACHE_DIR || RUN_LOCAL.contains(&rel.as_str()) {
            continue;
        }
        if entry.file_type()?.is_dir() {
            collect(root, &p, out)?;
        } else {
            let bytes = fs::read(&p)?;
            out.push(Artifact { path: rel, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        }
    }
    Ok(())
}

/// Fixed-format CSV field for a float: shortest round-trip text.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Joins already formatted fields into one CSV line (no quoting needed for our fields).
pub fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut line = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(f.as_ref());
    }
    line.push('\n');
    line
}
