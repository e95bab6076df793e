//! Self-describing checkpoint files: safetensors weights plus a JSON header.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "attncut-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    /// Completed training steps.
    pub step: u64,
    pub opt_g_steps: u64,
    pub opt_d_steps: u64,
}

impl CheckpointMeta {
    pub fn new(config: TrainConfig, step: u64, opt_g_steps: u64, opt_d_steps: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            step,
            opt_g_steps,
            opt_d_steps,
        }
    }
}

const META_KEY: &str = "attncut";

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)], meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string(meta).map_err(|e| Error::checkpoint(path, e.to_string()))?;
    let info = HashMap::from([(META_KEY.to_string(), json)]);
    let data: Vec<(&str, &Tensor)> = tensors.iter().map(|(k, t)| (k.as_str(), t)).collect();
    safetensors::serialize_to_file(data, Some(info), path).map_err(|e| Error::checkpoint(path, e.to_string()))
}

pub fn read_meta(bytes: &[u8], path: &Path) -> Result<CheckpointMeta> {
    let (_, header) = SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::checkpoint(path, format!("not a checkpoint file: {e}")))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::checkpoint(path, "missing checkpoint header"))?;
    let probe: serde_json::Value =
        serde_json::from_str(json).map_err(|e| Error::checkpoint(path, format!("corrupt header: {e}")))?;
    let format = probe.get("format").and_then(|v| v.as_str()).unwrap_or("");
    let version = probe.get("version").and_then(|v| v.as_u64());
    if format != CHECKPOINT_FORMAT || version != Some(u64::from(CHECKPOINT_VERSION)) {
        return Err(Error::checkpoint(
            path,
            format!(
                "incompatible checkpoint: format `{format}` version {}, expected `{CHECKPOINT_FORMAT}` version {CHECKPOINT_VERSION}",
                version.map_or("?".to_string(), |v| v.to_string())
            ),
        ));
    }
    serde_json::from_value(probe).map_err(|e| Error::checkpoint(path, format!("corrupt header: {e}")))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, HashMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = read_meta(&bytes, path)?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)
        .map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok((meta, tensors))
}
