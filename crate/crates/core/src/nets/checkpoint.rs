//! Single-file checkpoints: a safetensors archive with every parameter keyed
//! by module path and a `meta.json` record stored in the archive header.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nn::ParamStore;
use super::{ModelConfig, Networks};
use crate::diffusion::Schedule;
use crate::error::{Error, Result};
use crate::layout::LabelMap;
use crate::mask::Task;

pub const META_KEY: &str = "meta.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub labels: Vec<String>,
    pub schedule: Schedule,
    pub task: Task,
    pub dataset: String,
    #[serde(default)]
    pub git_hash: Option<String>,
    /// Training configuration the weights came from, if any.
    #[serde(default)]
    pub train: Option<serde_json::Value>,
}

impl CheckpointMeta {
    pub fn label_map(&self) -> Result<LabelMap> {
        LabelMap::new(self.labels.iter().cloned())
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }
}

pub fn save_params(path: &Path, store: &ParamStore, meta_json: String) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tensors: Vec<(String, Tensor)> = store
        .tensors()
        .into_iter()
        .map(|(k, t)| Ok((k, t.contiguous()?)))
        .collect::<Result<_>>()?;
    let info = HashMap::from([(META_KEY.to_string(), meta_json)]);
    safetensors::serialize_to_file(tensors, Some(info), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Reads all tensors plus the raw `meta.json` string.
pub fn load_params(path: &Path) -> Result<(HashMap<String, Tensor>, String)> {
    let bytes = fs::read(path)?;
    let ctx = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(ctx)?;
    let meta = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no {META_KEY} record", path.display())))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok((tensors, meta))
}

pub fn save(path: &Path, nets: &Networks, meta: &CheckpointMeta) -> Result<()> {
    if meta.model != *nets.config() {
        return Err(Error::Checkpoint("meta model config does not match the networks".into()));
    }
    save_params(path, nets.store(), serde_json::to_string(meta)?)
}

pub fn load(path: &Path) -> Result<(Networks, CheckpointMeta)> {
    let (tensors, raw) = load_params(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&raw)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
    }
    if meta.labels.len() != meta.model.num_labels {
        return Err(Error::Checkpoint("label list length differs from num_labels".into()));
    }
    let nets = Networks::new(meta.model.clone(), 0)?;
    nets.store().load(&tensors)?;
    Ok((nets, meta))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    Ok(digest_bytes(&fs::read(path)?))
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short hash of the working tree's HEAD, when run inside a git checkout.
pub fn current_git_hash() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}
