//! Embedding cache: one little-endian `f32` file per entry plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use gemm_core::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};
use crate::formats::{read_json, write_atomic, write_json};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub n_rows: usize,
    pub dim: usize,
    pub dtype: String,
    pub encoder: String,
    /// SHA-256 of the binary file, hex encoded.
    pub checksum: String,
}

#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn check_key(key: &str) -> Result<()> {
    if key.is_empty() || key.contains(['/', '\\']) || key.starts_with('.') {
        return Err(AppError::Data(format!("invalid embedding key `{key}`")));
    }
    Ok(())
}

impl EmbeddingStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.root.join(format!("{key}.f32")), self.root.join(format!("{key}.json")))
    }

    pub fn contains(&self, key: &str) -> bool {
        let (bin, meta) = self.paths(key);
        bin.is_file() && meta.is_file()
    }

    /// Persists `m` under `key`, rounding entries to `f32`.
    pub fn save(&self, key: &str, encoder: &str, m: &Matrix) -> Result<()> {
        check_key(key)?;
        let (bin, meta) = self.paths(key);
        let bytes: Vec<u8> = m.as_slice().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        let sidecar = Sidecar {
            n_rows: m.rows(),
            dim: m.cols(),
            dtype: "f32".into(),
            encoder: encoder.into(),
            checksum: sha256_hex(&bytes),
        };
        write_atomic(&bin, &bytes)?;
        write_json(&meta, &sidecar)
    }

    pub fn sidecar(&self, key: &str) -> Result<Sidecar> {
        check_key(key)?;
        let (_, meta) = self.paths(key);
        if !meta.is_file() {
            return Err(AppError::KeyNotFound { store: self.root.clone(), key: key.into() });
        }
        read_json(&meta).map_err(|e| AppError::CorruptEntry { path: meta.clone(), message: e.to_string() })
    }

    pub fn load(&self, key: &str) -> Result<Matrix> {
        let sidecar = self.sidecar(key)?;
        let (bin, _) = self.paths(key);
        if !bin.is_file() {
            return Err(AppError::KeyNotFound { store: self.root.clone(), key: key.into() });
        }
        let corrupt = |message: String| AppError::CorruptEntry { path: bin.clone(), message };
        if sidecar.dtype != "f32" {
            return Err(corrupt(format!("unsupported dtype `{}`", sidecar.dtype)));
        }
        let bytes = fs::read(&bin).map_err(AppError::io(&bin))?;
        let expected = sidecar.n_rows * sidecar.dim * 4;
        if bytes.len() != expected {
            return Err(corrupt(format!("{} bytes, sidecar implies {expected}", bytes.len())));
        }
        if sha256_hex(&bytes) != sidecar.checksum {
            return Err(corrupt("checksum mismatch".into()));
        }
        let values = bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
        Ok(Matrix::from_vec(sidecar.n_rows, sidecar.dim, values))
    }
}
