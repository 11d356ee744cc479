use std::fs;
use std::path::Path;

use gemm_core::gan::{sample_profiles, Cohort, ModelKind, TrainState};
use gemm_core::metrics::{correlation_matrix, evaluate_runs, EvalReport, UtilityTask};
use gemm_core::rng::{derive_seed, tags};

use super::{label_indices, load_prepared, resolve_checkpoint, Prepared};
use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::formats::write_json;
use crate::plots;
use crate::store::sha256_hex;
use crate::workdir::Layout;

/// Disease-type and primary-site class indices of the cohort's cases.
pub fn utility_labels(cohort: &Cohort) -> [(&'static str, Vec<usize>); 2] {
    let (_, disease) = label_indices(cohort.cases.iter().map(|c| c.disease_type.as_str()));
    let (_, site) = label_indices(cohort.cases.iter().map(|c| c.primary_site.as_str()));
    [("disease_type", disease), ("primary_site", site)]
}

/// Samples `eval.n_runs` generated cohorts for the test cases and scores them.
pub fn evaluate_state(cfg: &RunConfig, state: &TrainState, data: &Prepared, checkpoint_ref: Option<String>) -> Result<(EvalReport, Vec<gemm_core::Matrix>)> {
    let runs = sample_profiles(state, &data.test, cfg.eval.n_runs, cfg.seed)?;
    let labels = utility_labels(&data.test);
    // generated rows are conditioned on the test cases, so they carry the same labels
    let tasks: Vec<UtilityTask<'_>> =
        labels.iter().map(|(name, l)| UtilityTask { name, real_labels: l, gen_labels: l }).collect();
    let tasks = (state.config.kind != ModelKind::VanillaWganGp).then_some(tasks.as_slice());
    let metrics = evaluate_runs(&data.test.profiles, &runs, tasks, &cfg.eval);
    let report = EvalReport {
        metrics,
        config_hash: cfg.result_hash()?,
        seeds: (0..cfg.eval.n_runs as u64).map(|r| derive_seed(cfg.seed, tags::SAMPLE, r)).collect(),
        model_checkpoint_ref: checkpoint_ref,
    };
    Ok((report, runs))
}

/// Checkpoint file name plus content hash; stable across workdir locations.
pub fn checkpoint_ref(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    Ok(format!("{name}@sha256:{}", sha256_hex(&bytes)))
}

/// Evaluates a checkpoint on the test split and writes `report.json`
/// (plus PNG plots when enabled).
pub fn evaluate(cfg: &RunConfig, layout: &Layout, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let ckpt = resolve_checkpoint(layout, checkpoint)?;
    let (state, meta) = load_checkpoint(&ckpt)?;
    let data = load_prepared(layout, meta.kind == ModelKind::Gemm)?;
    let (report, runs) = evaluate_state(cfg, &state, &data, Some(checkpoint_ref(&ckpt)?))?;
    write_json(&layout.report(), &report)?;
    cfg.echo(&layout.evaluate())?;
    if cfg.plots {
        let dir = layout.evaluate().join("plots");
        for (name, m) in &report.metrics {
            if m.is_ok() {
                plots::bar_chart(&dir.join(format!("{name}.png")), &m.per_run)?;
            }
        }
        if let Some(first) = runs.first() {
            plots::heatmap_pair(&dir.join("correlation_heatmaps.png"), &correlation_matrix(&data.test.profiles), &correlation_matrix(first))?;
        }
    }
    for (name, m) in &report.metrics {
        println!("{name:<40} {:>9.4} ± {:.4}", m.mean, m.std);
    }
    Ok(report)
}
