use std::path::{Path, PathBuf};

use gemm_core::gan::{sample_profiles, ModelKind};
use gemm_core::preprocess::ExpressionMatrix;
use gemm_core::Matrix;

use super::{load_prepared, resolve_checkpoint};
use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::error::Result;
use crate::formats::write_expression;
use crate::workdir::Layout;

/// Writes `n_runs` generated profiles per test case, sample ids `{case_id}_run{r}`.
pub fn generate(cfg: &RunConfig, layout: &Layout, checkpoint: Option<&Path>, n_runs: usize) -> Result<PathBuf> {
    let ckpt = resolve_checkpoint(layout, checkpoint)?;
    let (state, meta) = load_checkpoint(&ckpt)?;
    let data = load_prepared(layout, meta.kind == ModelKind::Gemm)?;
    let runs = sample_profiles(&state, &data.test, n_runs, cfg.seed)?;
    let mut ids = Vec::new();
    for r in 0..runs.len() {
        ids.extend(data.test.cases.iter().map(|c| format!("{}_run{r}", c.case_id)));
    }
    let parts: Vec<&Matrix> = runs.iter().collect();
    let out = layout.generate().join("generated.tsv");
    write_expression(&out, &ExpressionMatrix::dense(ids, meta.gene_ids.clone(), Matrix::vstack(&parts)))?;
    cfg.echo(&layout.generate())?;
    Ok(out)
}
