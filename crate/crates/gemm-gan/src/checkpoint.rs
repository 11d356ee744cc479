//! Binary checkpoints: magic, format version, JSON metadata, then named
//! little-endian `f32` tensors.
//!
//! Parameters and optimizer moments live on the `f32` grid, so a save/load
//! round trip restores them bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gemm_core::fusion::FusionVariant;
use gemm_core::gan::{Categories, ModelDims, ModelKind, TrainConfig, TrainState};
use gemm_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::formats::write_atomic;
use crate::store::sha256_hex;

pub const MAGIC: &[u8; 8] = b"GEMMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub kind: ModelKind,
    pub variant: FusionVariant,
    pub step: u64,
    pub seed: u64,
    /// Number of genes.
    pub g: usize,
    /// Shared embedding width.
    pub d: usize,
    pub dims: ModelDims,
    pub categories: Option<Categories>,
    pub gene_ids: Vec<String>,
    pub generator_updates: u64,
    pub critic_updates: u64,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the tensor payload.
    pub checksum: String,
}

pub fn save_checkpoint(path: &Path, state: &TrainState, gene_ids: &[String]) -> Result<()> {
    let tensors = state.export_tensors();
    let mut payload = Vec::new();
    for (_, m) in &tensors {
        payload.extend(m.as_slice().iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    let meta = CheckpointMeta {
        config: state.config.clone(),
        kind: state.config.kind,
        variant: state.config.variant,
        step: state.step,
        seed: state.config.seed,
        g: state.dims.g,
        d: state.config.fusion.d,
        dims: state.dims.clone(),
        categories: state.model.categories().cloned(),
        gene_ids: gene_ids.to_vec(),
        generator_updates: state.opt_generator.step,
        critic_updates: state.opt_critic.step,
        tensors: tensors.iter().map(|(name, m)| TensorEntry { name: name.clone(), rows: m.rows(), cols: m.cols() }).collect(),
        checksum: sha256_hex(&payload),
    };
    let meta_bytes = serde_json::to_vec(&meta).map_err(|e| AppError::format(path, e))?;
    let mut out = Vec::with_capacity(20 + meta_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&payload);
    write_atomic(path, &out)
}

/// Metadata and raw tensors without rebuilding the model.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, Matrix>)> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    let corrupt = |message: &str| AppError::CorruptCheckpoint { path: path.to_path_buf(), message: message.into() };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(AppError::VersionMismatch { path: path.to_path_buf(), found: version, expected: VERSION });
    }
    let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let meta_end = 20usize.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated metadata"))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[20..meta_end]).map_err(|e| corrupt(&format!("metadata: {e}")))?;
    let payload = &bytes[meta_end..];
    let expected: usize = meta.tensors.iter().map(|t| t.rows * t.cols * 4).sum();
    if payload.len() != expected {
        return Err(corrupt(&format!("payload is {} bytes, metadata implies {expected}", payload.len())));
    }
    if sha256_hex(payload) != meta.checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let mut tensors = BTreeMap::new();
    let mut offset = 0;
    for t in &meta.tensors {
        let n = t.rows * t.cols;
        let values = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        offset += 4 * n;
        tensors.insert(t.name.clone(), Matrix::from_vec(t.rows, t.cols, values));
    }
    Ok((meta, tensors))
}

/// Rebuilds the training state recorded in a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, CheckpointMeta)> {
    let (meta, tensors) = read_checkpoint(path)?;
    let mut state = TrainState::new(meta.config.clone(), meta.dims.clone(), meta.categories.clone())?;
    state
        .import_tensors(&tensors, meta.generator_updates, meta.critic_updates)
        .map_err(|e| AppError::CorruptCheckpoint { path: path.to_path_buf(), message: e.to_string() })?;
    state.step = meta.step;
    Ok((state, meta))
}
