//! Model file: JSON manifest plus a flat little-endian f32 blob in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, NetParams};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    config: NetConfig,
    param_count: usize,
    dtype: String,
    data_file: String,
    tensors: Vec<TensorEntry>,
}

/// Writes `path` (JSON) and a sibling `.bin` with the weights.
pub fn save_model(params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bin_path = path.with_extension("bin");
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        config: *params.config(),
        param_count: params.param_count(),
        dtype: "f32le".into(),
        data_file: bin_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors: params
            .layout()
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let bytes: Vec<u8> = params.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model format version {} (expected {MODEL_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f32le" {
        return Err(Error::UnsupportedFormat(format!("model dtype {}", manifest.dtype)));
    }
    let layout = manifest.config.layout();
    let expected: Vec<(&str, &[usize])> = layout.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
    let found: Vec<(&str, &[usize])> = manifest.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
    if expected != found {
        return Err(Error::Format("tensor list does not match the model config".into()));
    }
    let bin_path = path.with_file_name(&manifest.data_file);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() != layout.total * 4 {
        return Err(Error::Format(format!(
            "{}: {} bytes for {} parameters",
            bin_path.display(),
            bytes.len(),
            layout.total
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    NetParams::from_values(manifest.config, values)
}
