//! Run manifests: enough provenance to repeat a command exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    /// input path -> sha256 of its contents
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

impl RunManifest {
    pub fn new(
        command: &str,
        args: &[String],
        config: serde_json::Value,
        seed: u64,
        inputs: &[&Path],
        outputs: &[PathBuf],
    ) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            command: command.to_string(),
            args: args.to_vec(),
            config,
            seed,
            inputs,
            tool_version: TOOL_VERSION.to_string(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
