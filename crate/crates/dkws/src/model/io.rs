//! Versioned binary model files, little-endian, with the config and
//! vocabulary manifest embedded so a file is loadable with no side channel.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureNorm, Model, ModelConfig, ModelError};
use crate::numerics::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"DKWSMDL1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    feature_norm: FeatureNorm,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

fn serialize(model: &Model<f32>) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        feature_norm: model.feature_norm.clone(),
        params: model
            .params
            .iter()
            .map(|(_, e)| ParamMeta { name: e.name.clone(), shape: e.value.shape().to_vec() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("model header serializes");
    let data_len: usize = model.params.iter().map(|(_, e)| e.value.numel() * 4).sum();
    let mut buf = Vec::with_capacity(8 + 4 + header_json.len() + data_len);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for (_, e) in model.params.iter() {
        for v in e.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, serialize(model))
        .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<Model<f32>, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(ModelError::Format("missing DKWSMDL1 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(ModelError::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| ModelError::Format(format!("bad header json: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut params = ParamSet::new();
    let mut offset = 12 + header_len;
    for meta in &header.params {
        let numel: usize = meta.shape.iter().product();
        let end = offset + numel * 4;
        if bytes.len() < end {
            return Err(ModelError::Format(format!("truncated data for '{}'", meta.name)));
        }
        let data: Vec<f32> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(meta.shape.clone(), data)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        params.insert(meta.name.clone(), tensor);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(ModelError::Format("trailing bytes after parameter data".into()));
    }
    Model::assemble(header.config, params, header.feature_norm)
}

pub(super) fn fingerprint(model: &Model<f32>) -> u64 {
    let bytes = serialize(model);
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
