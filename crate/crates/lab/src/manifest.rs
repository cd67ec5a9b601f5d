//! Run manifests: enough about a command invocation to repeat it exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Effective arguments (subcommand first), with paths as given.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Effective configuration as canonical TOML.
    pub config: Option<String>,
    pub config_hash: Option<String>,
    pub data_root: Option<PathBuf>,
    pub dataset_hash: Option<String>,
    /// Input files other than the dataset, with their SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub out_dir: PathBuf,
    /// Output files relative to `out_dir`, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, out_dir: &Path) -> Self {
        RunManifest {
            tool: "crst".into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            args,
            seed: None,
            config: None,
            config_hash: None,
            data_root: None,
            dataset_hash: None,
            inputs: BTreeMap::new(),
            out_dir: out_dir.to_path_buf(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Records the hashes of the named files under `out_dir`.
    pub fn add_outputs<'a>(&mut self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for name in names {
            let h = file_sha256(&self.out_dir.join(name))?;
            self.outputs.insert(name.to_string(), h);
        }
        Ok(())
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| LabError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| LabError::parse(path, e.line(), e.to_string()))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output files whose hashes differ between two manifests (or exist in only one).
pub fn differing_outputs(a: &RunManifest, b: &RunManifest) -> Vec<String> {
    let mut names: Vec<&String> = a.outputs.keys().chain(b.outputs.keys()).collect();
    names.sort();
    names.dedup();
    names.into_iter().filter(|n| a.outputs.get(*n) != b.outputs.get(*n)).cloned().collect()
}
