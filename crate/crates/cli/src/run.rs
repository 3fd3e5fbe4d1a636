//! Run manifests: what a command was asked to do, with content hashes of its
//! inputs, written next to its outputs.

use std::io::Read;
use std::path::{Path, PathBuf};

use dermtriage::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// The command's full configuration document.
    pub config: serde_json::Value,
    /// SHA-256 of the canonical (key-sorted, compact) configuration.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// serde_json maps are sorted by key, so the compact rendering is canonical.
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Hashes a file, or every file below a directory in sorted path order.
fn digest_inputs(path: &Path, out: &mut Vec<InputDigest>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(format!("listing {}", path.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for entry in entries {
            digest_inputs(&entry, out)?;
        }
        Ok(())
    } else {
        out.push(InputDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let mut digests = Vec::new();
        for input in inputs {
            digest_inputs(input, &mut digests)?;
        }
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            inputs: digests,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
