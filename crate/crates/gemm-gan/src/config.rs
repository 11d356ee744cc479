//! Run configuration: a TOML document with strict keys, overridable by flags.

use std::path::{Path, PathBuf};

use gemm_core::fusion::FusionVariant;
use gemm_core::gan::TrainConfig;
use gemm_core::metrics::EvalConfig;
use gemm_core::pipeline::PreprocessConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::formats::{read_to_string, write_atomic};
use crate::store::sha256_hex;

/// Environment variable that overrides the configured workdir.
pub const WORKDIR_ENV: &str = "GEMM_GAN_WORKDIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory of `{case_id}.png` slide images.
    pub slides: Option<PathBuf>,
    /// Raw expression table.
    pub expression: Option<PathBuf>,
    /// Clinical records, one JSON object per line.
    pub metadata: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { slides: None, expression: None, metadata: None, workdir: PathBuf::from("gemm-work") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Steps between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Steps between progress lines on stdout.
    pub log_every: u64,
    /// Share of training cases held out for early stopping, when enabled.
    pub validation_fraction: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self { checkpoint_every: 500, log_every: 100, validation_fraction: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub variants: Vec<FusionVariant>,
    /// Step budget per variant; defaults to `model.max_steps`.
    pub max_steps: Option<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { variants: FusionVariant::ALL.to_vec(), max_steps: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub plots: bool,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub model: TrainConfig,
    pub training: TrainingSection,
    pub eval: EvalConfig,
    pub ablation: AblationSection,
}


impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| AppError::Config { path: origin.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(AppError::Config { path: path.to_path_buf(), message: "file not found".into() });
        }
        Self::from_toml(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AppError::Config { path: PathBuf::from("<effective>"), message: e.to_string() })
    }

    /// Propagates the top-level seed and checks numeric fields.
    pub fn finalize(mut self) -> Result<Self> {
        let bad = |message: String| AppError::Config { path: PathBuf::from("<effective>"), message };
        if self.seed > i64::MAX as u64 {
            return Err(bad(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        self.model.seed = self.seed;
        self.eval.seed = self.seed;
        self.model.validate().map_err(|e| bad(e.to_string()))?;
        for spec in self.eval.detectability.iter().chain(&self.eval.utility) {
            spec.validate().map_err(|e| bad(e.to_string()))?;
        }
        if self.eval.t == 0 || self.eval.n_runs == 0 {
            return Err(bad("eval.t and eval.n_runs must be positive".into()));
        }
        let p = &self.preprocess;
        if p.tile_size == 0 || p.thumbnail_max_side == 0 {
            return Err(bad("tile_size and thumbnail_max_side must be positive".into()));
        }
        if !(0.0..1.0).contains(&p.min_tissue) || !(0.0..=1.0).contains(&p.max_missing) {
            return Err(bad("min_tissue must lie in [0, 1) and max_missing in [0, 1]".into()));
        }
        if !(p.test_fraction > 0.0 && p.test_fraction < 1.0) {
            return Err(bad("test_fraction must lie in (0, 1)".into()));
        }
        if !(self.training.validation_fraction > 0.0 && self.training.validation_fraction < 1.0) {
            return Err(bad("validation_fraction must lie in (0, 1)".into()));
        }
        if self.training.log_every == 0 {
            return Err(bad("log_every must be positive".into()));
        }
        if self.ablation.variants.is_empty() {
            return Err(bad("ablation needs at least one variant".into()));
        }
        Ok(self)
    }

    /// Hash of every section that influences results (paths excluded, so a
    /// relocated workdir keeps its hash).
    pub fn result_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths = Paths::default();
        c.plots = false;
        Ok(sha256_hex(c.to_toml()?.as_bytes()))
    }

    /// Writes the effective configuration next to a command's artifacts.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("effective_config.toml"), self.to_toml()?.as_bytes())
    }

    pub fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = path.clone().ok_or_else(|| AppError::Config { path: PathBuf::from("<effective>"), message: format!("paths.{key} is not set") })?;
        if !p.exists() {
            return Err(AppError::Config { path: p.clone(), message: format!("paths.{key} does not exist") });
        }
        Ok(p)
    }
}
