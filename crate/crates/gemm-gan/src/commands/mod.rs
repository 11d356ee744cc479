//! One function per subcommand. Each takes the effective configuration and
//! the workdir layout and writes its artifacts under the workdir.

mod ablate;
mod embed;
mod evaluate;
mod generate;
mod preprocess;
mod synth;
mod train;

pub use ablate::{ablate, ablate_with, AblationRow, AblationTable, ABLATION_COLUMNS};
pub use embed::embed;
pub use evaluate::{evaluate, evaluate_state, utility_labels};
pub use generate::generate;
pub use preprocess::{preprocess, PreprocessOutcome};
pub use synth::{make_synthetic, toy_config, SynthArgs};
pub use train::{train, train_in_memory, TrainOutcome};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use gemm_core::encoders::{STUB_IMAGE_DIM, STUB_TEXT_BUCKETS};
use gemm_core::gan::{CaseInputs, Cohort};
use gemm_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::formats::{read_expression, read_json, read_ndjson, SplitFile};
use crate::store::EmbeddingStore;
use crate::workdir::Layout;

/// Per-case record written by `preprocess`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRow {
    pub case_id: String,
    pub disease_type: String,
    pub primary_site: String,
    pub summary: String,
}

/// Preprocessed cohorts ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Cohort,
    pub test: Cohort,
    pub gene_ids: Vec<String>,
}

fn require_file(path: &Path, produced_by: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(AppError::Data(format!("{} not found; run `{produced_by}` first", path.display())))
    }
}

/// Loads the standardized expression, split and case records, plus the
/// cached native embeddings when `embeddings` is set.
pub fn load_prepared(layout: &Layout, embeddings: bool) -> Result<Prepared> {
    for p in [layout.expression(), layout.split(), layout.cases()] {
        require_file(&p, "preprocess")?;
    }
    let expr = read_expression(&layout.expression())?;
    if expr.missing.iter().any(|&m| m) {
        return Err(AppError::format(&layout.expression(), "standardized table has missing entries"));
    }
    let split: SplitFile = read_json(&layout.split())?;
    let cases: BTreeMap<String, CaseRow> =
        read_ndjson::<CaseRow>(&layout.cases())?.into_iter().map(|c| (c.case_id.clone(), c)).collect();
    let index = expr.sample_index();
    let images = EmbeddingStore::new(layout.image_store());
    let texts = EmbeddingStore::new(layout.text_store());
    if embeddings && !layout.embeddings().is_dir() {
        return Err(AppError::Data(format!("{} not found; run `embed` first", layout.embeddings().display())));
    }
    let cohort = |ids: &[String]| -> Result<Cohort> {
        let mut rows = Vec::with_capacity(ids.len());
        let mut inputs = Vec::with_capacity(ids.len());
        for id in ids {
            let row = *index
                .get(id.as_str())
                .ok_or_else(|| AppError::Data(format!("split case {id} has no expression profile")))?;
            let case = cases.get(id).ok_or_else(|| AppError::Data(format!("split case {id} has no case record")))?;
            let (image, text) = if embeddings {
                (images.load(id)?, texts.load(id)?)
            } else {
                (Matrix::zeros(0, STUB_IMAGE_DIM), Matrix::zeros(0, STUB_TEXT_BUCKETS))
            };
            rows.push(row);
            inputs.push(CaseInputs {
                case_id: id.clone(),
                image,
                text,
                disease_type: case.disease_type.clone(),
                primary_site: case.primary_site.clone(),
            });
        }
        Ok(Cohort::new(inputs, expr.values.select_rows(&rows))?)
    };
    Ok(Prepared { train: cohort(&split.train)?, test: cohort(&split.test)?, gene_ids: expr.gene_ids.clone() })
}

/// Sorted distinct values, and the index of each item's value among them.
pub fn label_indices<'a>(values: impl Iterator<Item = &'a str> + Clone) -> (Vec<String>, Vec<usize>) {
    let levels: Vec<String> = values.clone().collect::<BTreeSet<_>>().into_iter().map(str::to_string).collect();
    let idx = values.map(|v| levels.iter().position(|l| l == v).expect("level present")).collect();
    (levels, idx)
}

/// Checkpoint to use: the explicit one, or the final checkpoint of `train`.
pub fn resolve_checkpoint(layout: &Layout, explicit: Option<&Path>) -> Result<PathBuf> {
    let path = explicit.map_or_else(|| layout.final_checkpoint(), Path::to_path_buf);
    if !path.is_file() {
        return Err(AppError::Data(format!("checkpoint {} not found", path.display())));
    }
    Ok(path)
}
