//! Checkpoint directory: `manifest.json` plus one little-endian blob per
//! submodule (`encoder_0.bin`, ..., `decoder.bin`, `classifier_1.bin`, ...,
//! `critic.bin`).

use std::fs;
use std::path::Path;

use disentangle_tensor::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Networks};
use crate::data::AttributeSchema;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub module: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub schema: AttributeSchema,
    pub class_names: Vec<Vec<String>>,
    pub model: ModelConfig,
    pub image_size: usize,
    pub code_shape: [usize; 3],
    pub params: Vec<ParamEntry>,
    /// SHA-256 of every blob, concatenated in manifest order.
    pub params_sha256: String,
}

pub(crate) fn blob<T: Real>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * if T::NAME == "f32" { 4 } else { 8 });
    for v in values {
        let v = v.to_f64_lossy();
        if T::NAME == "f32" {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn unblob<T: Real>(bytes: &[u8], dtype: &str) -> Vec<T> {
    match dtype {
        "f32" => bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        _ => bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    }
}

fn module_blobs<T: Real>(nets: &Networks<T>) -> Vec<(String, Vec<u8>)> {
    nets.named_param_sets()
        .into_iter()
        .map(|(name, p)| {
            let mut bytes = Vec::new();
            for t in p.tensors() {
                bytes.extend(blob(t.data()));
            }
            (name, bytes)
        })
        .collect()
}

/// Hex SHA-256 over all parameter blobs in checkpoint order.
pub fn params_sha256<T: Real>(nets: &Networks<T>) -> String {
    let mut h = Sha256::new();
    for (_, b) in module_blobs(nets) {
        h.update(&b);
    }
    hex::encode(h.finalize())
}

pub fn save_networks<T: Real>(nets: &Networks<T>, class_names: &[Vec<String>], dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut hasher = Sha256::new();
    for (name, bytes) in module_blobs(nets) {
        hasher.update(&bytes);
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    }
    let params = nets
        .named_param_sets()
        .into_iter()
        .flat_map(|(module, p)| {
            p.iter()
                .map(|(n, t)| ParamEntry {
                    module: module.clone(),
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        dtype: T::NAME.to_string(),
        schema: nets.schema.clone(),
        class_names: class_names.to_vec(),
        model: nets.config.clone(),
        image_size: nets.config.image_size,
        code_shape: nets.config.code_shape(),
        params,
        params_sha256: hex::encode(hasher.finalize()),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: path.clone(),
        reason: e.to_string(),
    })
}

/// Loads a checkpoint, validating every parameter shape and the content
/// hash. Values are converted to `T` if the stored dtype differs.
pub fn load_networks<T: Real>(dir: &Path) -> Result<(Networks<T>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let bad = |reason: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        reason,
    };
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", manifest.format_version)));
    }
    if manifest.dtype != "f32" && manifest.dtype != "f64" {
        return Err(bad(format!("unknown dtype {}", manifest.dtype)));
    }
    let width = if manifest.dtype == "f32" { 4 } else { 8 };
    let mut nets = Networks::<T>::new(manifest.model.clone(), manifest.schema.clone(), 0)?;
    let mut entries = manifest.params.iter();
    let mut hasher = Sha256::new();
    for (module, params) in nets.named_param_sets_mut() {
        let path = dir.join(format!("{module}.bin"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(&bytes);
        let mut offset = 0;
        for i in 0..params.len() {
            let expected = params.get(i).shape().to_vec();
            let entry = entries
                .next()
                .ok_or_else(|| bad(format!("manifest lists too few parameters (at {module})")))?;
            if entry.module != module || entry.name != params.names()[i] || entry.shape != expected {
                return Err(bad(format!(
                    "parameter {}/{} {:?} does not match architecture {}/{} {:?}",
                    entry.module, entry.name, entry.shape, module, params.names()[i], expected
                )));
            }
            let n: usize = expected.iter().product::<usize>() * width;
            let chunk = bytes
                .get(offset..offset + n)
                .ok_or_else(|| bad(format!("{module}.bin is truncated")))?;
            params.set(i, unblob(chunk, &manifest.dtype));
            offset += n;
        }
        if offset != bytes.len() {
            return Err(bad(format!("{module}.bin has {} trailing bytes", bytes.len() - offset)));
        }
    }
    if entries.next().is_some() {
        return Err(bad("manifest lists more parameters than the architecture".into()));
    }
    let digest = hex::encode(hasher.finalize());
    if digest != manifest.params_sha256 {
        return Err(bad(format!("parameter hash {digest} != manifest {}", manifest.params_sha256)));
    }
    Ok((nets, manifest))
}
