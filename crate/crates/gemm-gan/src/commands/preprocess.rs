use std::collections::BTreeSet;
use std::fs;

use gemm_core::pipeline::tile_slide;
use gemm_core::preprocess::{filter_genes, make_split, serialize_clinical_summary, zscore_fit_transform};

use super::CaseRow;
use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::formats::{read_clinical, read_expression, read_slide_png, write_expression, write_json, write_ndjson, write_tile_png, ManifestRow, SplitFile};
use crate::workdir::Layout;

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessOutcome {
    pub cases: usize,
    pub tiles: usize,
    pub genes: usize,
    /// `(case_id, reason)` for slides that were skipped.
    pub failures: Vec<(String, String)>,
}

/// Tiles every slide, filters and standardizes expression, writes case
/// summaries and the train/test split.
pub fn preprocess(cfg: &RunConfig, layout: &Layout) -> Result<PreprocessOutcome> {
    let expression_path = RunConfig::require(&cfg.paths.expression, "expression")?;
    let metadata_path = RunConfig::require(&cfg.paths.metadata, "metadata")?;
    let slides_dir = RunConfig::require(&cfg.paths.slides, "slides")?;
    let records = read_clinical(&metadata_path)?;
    let expr = read_expression(&expression_path)?;

    let mut seen = BTreeSet::new();
    if let Some(dup) = records.iter().find(|r| !seen.insert(r.case_id.as_str())) {
        return Err(AppError::Data(format!("{}: duplicate case {}", metadata_path.display(), dup.case_id)));
    }
    if records.is_empty() {
        return Err(AppError::Data(format!("{}: no case records", metadata_path.display())));
    }

    // tiles and failures per slide; a failure skips the case
    let mut failures = Vec::new();
    let mut kept = Vec::new();
    for r in &records {
        let path = slides_dir.join(format!("{}.png", r.case_id));
        let tiled = read_slide_png(&path, &r.case_id).and_then(|slide| {
            let tiles = tile_slide(&slide, &cfg.preprocess)?;
            if tiles.is_empty() {
                return Err(AppError::Data("no tile passed the tissue threshold".into()));
            }
            Ok((slide, tiles))
        });
        match tiled {
            Ok((slide, tiles)) => {
                let items: Vec<_> =
                    tiles.iter().map(|t| (t.stem(), slide.crop(t.origin_x, t.origin_y, t.size), ManifestRow::from(t))).collect();
                kept.push((r, items));
            }
            Err(e) => {
                eprintln!("warning: skipping slide of case {}: {e}", r.case_id);
                failures.push((r.case_id.clone(), e.to_string()));
            }
        }
    }
    if 2 * failures.len() > records.len() {
        return Err(AppError::Data(format!("{} of {} slides failed; aborting", failures.len(), records.len())));
    }

    let index = expr.sample_index();
    let mut rows = Vec::new();
    let mut cases = Vec::new();
    let mut manifest = Vec::new();
    let mut crops = Vec::new();
    for (r, items) in kept {
        match index.get(r.case_id.as_str()) {
            Some(&i) => {
                rows.push(i);
                for (stem, crop, row) in items {
                    crops.push((stem, crop));
                    manifest.push(row);
                }
                cases.push(CaseRow {
                    case_id: r.case_id.clone(),
                    disease_type: r.disease_type.clone(),
                    primary_site: r.primary_site.clone(),
                    summary: serialize_clinical_summary(r),
                });
            }
            None => eprintln!("warning: case {} has no expression profile; skipped", r.case_id),
        }
    }
    let filtered = filter_genes(&expr.select_samples(&rows), cfg.preprocess.max_missing)?;
    let ids: Vec<String> = cases.iter().map(|c| c.case_id.clone()).collect();
    let split = make_split(&ids, cfg.preprocess.test_fraction, cfg.seed)?;
    let (z, stats) = zscore_fit_transform(&filtered, &split, cfg.preprocess.log1p)?;

    let tiles_dir = layout.tiles();
    if tiles_dir.exists() {
        fs::remove_dir_all(&tiles_dir).map_err(AppError::io(&tiles_dir))?;
    }
    for (stem, crop) in &crops {
        write_tile_png(&tiles_dir.join(format!("{stem}.png")), crop)?;
    }
    write_ndjson(&layout.manifest(), &manifest)?;
    write_expression(&layout.expression(), &z)?;
    write_json(&layout.gene_stats(), &stats)?;
    write_ndjson(&layout.cases(), &cases)?;
    write_json(&layout.split(), &SplitFile::new(&split, cfg.seed, cfg.preprocess.test_fraction))?;
    write_json(&layout.preprocess().join("failures.json"), &failures)?;
    cfg.echo(&layout.preprocess())?;
    Ok(PreprocessOutcome { cases: cases.len(), tiles: manifest.len(), genes: z.n_genes(), failures })
}
