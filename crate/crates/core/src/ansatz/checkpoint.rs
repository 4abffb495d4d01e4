//! Checkpoints: a JSON manifest plus a flat little-endian `f64` parameter block.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ansatz::{AnsatzSpec, ParameterLayout};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "lrnqs-checkpoint-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub ansatz: AnsatzSpec,
    pub layout: ParameterLayout,
    pub parameter_count: usize,
    pub seed: u64,
    pub iteration: usize,
    /// Free-form run state (sampler chains, configuration echo).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl CheckpointManifest {
    pub fn new(ansatz: AnsatzSpec, layout: ParameterLayout, seed: u64, iteration: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            parameter_count: layout.parameter_count(),
            ansatz,
            layout,
            seed,
            iteration,
            extra: serde_json::Value::Null,
        }
    }
}

pub fn encode_parameters(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_parameters(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(format!("parameter block length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_checkpoint(dir: &Path, manifest: &CheckpointManifest, values: &[f64]) -> Result<()> {
    if values.len() != manifest.parameter_count {
        return Err(Error::Dimension {
            context: "checkpoint parameters",
            expected: manifest.parameter_count,
            actual: values.len(),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_vec_pretty(manifest)?).map_err(|e| Error::io(&manifest_path, e))?;
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, encode_parameters(values)).map_err(|e| Error::io(&params_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<f64>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!("unsupported checkpoint format {}", manifest.format)));
    }
    manifest.layout.validate()?;
    let params_path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let values = decode_parameters(&bytes)?;
    if values.len() != manifest.parameter_count || values.len() != manifest.layout.parameter_count() {
        return Err(Error::Dimension {
            context: "checkpoint parameters",
            expected: manifest.parameter_count,
            actual: values.len(),
        });
    }
    Ok((manifest, values))
}
