//! Checkpoints: a JSON manifest (schema version, config, tensor shapes, blob offsets) next to a
//! raw little-endian f32 blob with the same stem.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint load error: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of f32 values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("bin")
}

pub fn save_checkpoint(
    json_path: &Path,
    kind: &str,
    config: serde_json::Value,
    tensors: &[(String, Vec<usize>, &[f64])],
) -> Result<CheckpointManifest, CheckpointError> {
    let blob = blob_path(json_path);
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, shape, vals) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset: bytes.len(),
            len: vals.len(),
        });
        bytes.extend(vals.iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        kind: kind.into(),
        config,
        blob: blob.file_name().unwrap().to_string_lossy().into_owned(),
        tensors: entries,
    };
    std::fs::write(&blob, bytes)?;
    std::fs::write(json_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

pub fn load_checkpoint(json_path: &Path) -> Result<(CheckpointManifest, TensorMap), CheckpointError> {
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(json_path)?)?;
    if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(CheckpointError::Load(format!("unsupported schema version {}", manifest.schema_version)));
    }
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let bytes = std::fs::read(dir.join(&manifest.blob))?;
    let mut map = BTreeMap::new();
    for t in &manifest.tensors {
        let end = t.offset + 4 * t.len;
        if end > bytes.len() || t.shape.iter().product::<usize>() != t.len {
            return Err(CheckpointError::Load(format!("tensor `{}` is inconsistent with the blob", t.name)));
        }
        let vals = bytes[t.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        map.insert(t.name.clone(), (t.shape.clone(), vals));
    }
    Ok((manifest, map))
}
