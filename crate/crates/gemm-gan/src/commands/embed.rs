use std::collections::BTreeMap;
use std::fs;

use gemm_core::encoders::{PatchEncoder, TextEncoder};
use gemm_core::gan::FrozenEncoders;
use gemm_core::params::ParamStore;

use super::{require_file, CaseRow};
use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::formats::{read_ndjson, read_tile_png, ManifestRow};
use crate::store::EmbeddingStore;
use crate::workdir::Layout;

/// Runs the frozen encoders over every case's tiles and summary and caches
/// the native embeddings. Returns the number of cases embedded.
pub fn embed(cfg: &RunConfig, layout: &Layout) -> Result<usize> {
    require_file(&layout.manifest(), "preprocess")?;
    require_file(&layout.cases(), "preprocess")?;
    let manifest: Vec<ManifestRow> = read_ndjson(&layout.manifest())?;
    let cases: Vec<CaseRow> = read_ndjson(&layout.cases())?;
    let mut tiles: BTreeMap<&str, Vec<&ManifestRow>> = BTreeMap::new();
    for row in &manifest {
        tiles.entry(row.slide_id.as_str()).or_default().push(row);
    }

    let root = layout.embeddings();
    if root.exists() {
        fs::remove_dir_all(&root).map_err(AppError::io(&root))?;
    }
    let mut store = ParamStore::new();
    let encoders = FrozenEncoders::new(&mut store);
    let images = EmbeddingStore::new(layout.image_store());
    let texts = EmbeddingStore::new(layout.text_store());
    for case in &cases {
        let rows = tiles.get(case.case_id.as_str()).map(Vec::as_slice).unwrap_or_default();
        let crops = rows
            .iter()
            .map(|r| read_tile_png(&layout.tiles().join(r.file_name())))
            .collect::<Result<Vec<_>>>()?;
        let image = encoders.image.encode_native(&store, &crops)?;
        let text = encoders.text.encode_native(&store, &case.summary, cfg.model.max_tokens)?;
        images.save(&case.case_id, encoders.image.name(), &image)?;
        texts.save(&case.case_id, encoders.text.name(), &text)?;
    }
    cfg.echo(&root)?;
    Ok(cases.len())
}
