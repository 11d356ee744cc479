//! Workdir layout and the lock that keeps concurrent commands apart.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{AppError, Result};

pub const LOCK_FILE: &str = ".gemm-gan.lock";

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn preprocess(&self) -> PathBuf {
        self.root.join("preprocess")
    }
    pub fn tiles(&self) -> PathBuf {
        self.preprocess().join("tiles")
    }
    pub fn manifest(&self) -> PathBuf {
        self.tiles().join("manifest.ndjson")
    }
    pub fn expression(&self) -> PathBuf {
        self.preprocess().join("expression.tsv")
    }
    pub fn gene_stats(&self) -> PathBuf {
        self.preprocess().join("gene_stats.json")
    }
    pub fn cases(&self) -> PathBuf {
        self.preprocess().join("cases.jsonl")
    }
    pub fn split(&self) -> PathBuf {
        self.preprocess().join("split.json")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings")
    }
    pub fn image_store(&self) -> PathBuf {
        self.embeddings().join("image")
    }
    pub fn text_store(&self) -> PathBuf {
        self.embeddings().join("text")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.train().join("checkpoints")
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.ckpt")
    }
    pub fn loss_trace(&self) -> PathBuf {
        self.train().join("loss_trace.tsv")
    }
    pub fn step_log(&self) -> PathBuf {
        self.train().join("steps.ndjson")
    }
    pub fn generate(&self) -> PathBuf {
        self.root.join("generate")
    }
    pub fn evaluate(&self) -> PathBuf {
        self.root.join("evaluate")
    }
    pub fn report(&self) -> PathBuf {
        self.evaluate().join("report.json")
    }
    pub fn ablate(&self) -> PathBuf {
        self.root.join("ablate")
    }
}

/// Exclusive claim on a workdir, released on drop.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(AppError::io(root))?;
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(AppError::Locked(root.to_path_buf())),
            Err(e) => Err(AppError::Io { path, source: e }),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
