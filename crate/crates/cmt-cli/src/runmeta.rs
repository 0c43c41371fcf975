//! Per-run metadata sidecar.
//!
//! Every command that writes an artifact also writes `<artifact>.meta`:
//! the resolved configuration, the seed, and content hashes of inputs and
//! outputs — enough to re-run and verify the run. The file uses the same
//! `key = value` syntax the config parser reads, and contains nothing
//! volatile, so identical runs produce identical sidecars.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug)]
pub struct RunMeta {
    pairs: Vec<(String, String)>,
}

impl RunMeta {
    pub fn new(command: &str) -> Self {
        RunMeta {
            pairs: vec![("command".into(), command.into())],
        }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.pairs.push((key.into(), value.to_string()));
    }

    /// Record a file's path and content hash under `key` / `key.sha256`.
    pub fn push_file(&mut self, key: &str, path: &Path) -> Result<()> {
        self.push(key, path.display());
        self.push(format!("{key}.sha256"), sha256_hex(path)?);
        Ok(())
    }

    /// Write the sidecar next to `artifact` and return its path.
    pub fn write_for(&self, artifact: &Path) -> Result<PathBuf> {
        let mut name = OsString::from(artifact.as_os_str());
        name.push(".meta");
        let path = PathBuf::from(name);
        let mut text = String::new();
        for (k, v) in &self.pairs {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(v);
            text.push('\n');
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
