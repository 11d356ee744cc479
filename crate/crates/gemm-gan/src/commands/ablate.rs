use gemm_core::fusion::FusionVariant;
use gemm_core::gan::{ModelKind, TrainState};
use gemm_core::metrics::EvalReport;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate_state;
use super::{load_prepared, train_in_memory, Prepared};
use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::error::Result;
use crate::formats::{write_json, write_table};
use crate::workdir::Layout;

/// `(column header, metric name)` pairs of the comparison table.
pub const ABLATION_COLUMNS: [(&str, &str); 7] = [
    ("Prec.", "precision"),
    ("Recall", "recall"),
    ("C. MSE", "correlation_mse"),
    ("LR Acc.", "detectability_lr_accuracy"),
    ("LR F1", "detectability_lr_f1"),
    ("RF Acc.", "utility_disease_type_rf_accuracy"),
    ("RF F1", "utility_disease_type_rf_f1"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: FusionVariant,
    pub label: String,
    /// `None` when the variant trained and evaluated; otherwise the reason it failed.
    pub failure: Option<String>,
    /// One entry per column; `None` for a failed variant or metric.
    pub cells: Vec<Option<Cell>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub seed: u64,
    pub max_steps: u64,
}

impl AblationTable {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.failure.is_none() && r.cells.iter().all(Option::is_some))
    }
}

fn row_from_report(variant: FusionVariant, report: &EvalReport) -> AblationRow {
    let cells = ABLATION_COLUMNS
        .iter()
        .map(|(_, key)| report.metric(key).filter(|m| m.is_ok()).map(|m| Cell { mean: m.mean, std: m.std }))
        .collect();
    AblationRow { variant, label: variant.display_name().into(), failure: None, cells }
}

/// Trains and evaluates every configured fusion variant under one seed and
/// step budget and writes the comparison table. A failing variant is
/// recorded and the rest continue.
pub fn ablate(cfg: &RunConfig, layout: &Layout) -> Result<AblationTable> {
    ablate_with(cfg, layout, |c, data| train_in_memory(c, data, |_, _| true))
}

/// [`ablate`] with a caller-supplied trainer.
pub fn ablate_with(
    cfg: &RunConfig,
    layout: &Layout,
    mut trainer: impl FnMut(&RunConfig, &Prepared) -> Result<TrainState>,
) -> Result<AblationTable> {
    let data = load_prepared(layout, true)?;
    let max_steps = cfg.ablation.max_steps.unwrap_or(cfg.model.max_steps);
    let mut rows = Vec::new();
    for &variant in &cfg.ablation.variants {
        let mut vc = cfg.clone();
        vc.model.kind = ModelKind::Gemm;
        vc.model.variant = variant;
        vc.model.max_steps = max_steps;
        let dir = layout.ablate().join(variant.as_str());
        let outcome = trainer(&vc, &data).and_then(|state| {
            save_checkpoint(&dir.join("final.ckpt"), &state, &data.gene_ids)?;
            let (report, _) = evaluate_state(&vc, &state, &data, None)?;
            write_json(&dir.join("report.json"), &report)?;
            vc.echo(&dir)?;
            Ok(report)
        });
        let row = match outcome {
            Ok(report) => row_from_report(variant, &report),
            Err(e) => {
                eprintln!("warning: variant {variant} failed: {e}");
                AblationRow {
                    variant,
                    label: variant.display_name().into(),
                    failure: Some(e.to_string()),
                    cells: vec![None; ABLATION_COLUMNS.len()],
                }
            }
        };
        println!("{:<20} {}", row.label, row.failure.as_deref().unwrap_or("ok"));
        rows.push(row);
    }
    let table = AblationTable {
        columns: ABLATION_COLUMNS.iter().map(|(h, _)| h.to_string()).collect(),
        rows,
        seed: cfg.seed,
        max_steps,
    };
    let mut header = vec!["Variant".to_string()];
    header.extend(table.columns.iter().cloned());
    header.push("Status".into());
    let body: Vec<(String, Vec<String>)> = table
        .rows
        .iter()
        .map(|r| {
            let mut cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| c.as_ref().map_or_else(|| "failed".to_string(), |c| format!("{:.4} ± {:.4}", c.mean, c.std)))
                .collect();
            cells.push(r.failure.clone().map_or_else(|| "ok".into(), |f| format!("failed: {f}")));
            (r.label.clone(), cells)
        })
        .collect();
    write_table(&layout.ablate().join("table.tsv"), &header, &body)?;
    write_json(&layout.ablate().join("table.json"), &table)?;
    cfg.echo(&layout.ablate())?;
    Ok(table)
}
