//! Glue from raw cases to training cohorts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::{PatchEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::gan::{CaseInputs, Cohort, FrozenEncoders};
use crate::params::ParamStore;
use crate::preprocess::{
    extract_tiles, filter_genes, make_split, segment_tissue, serialize_clinical_summary, zscore_fit_transform, ClinicalRecord,
    DatasetSplit, ExpressionMatrix, GeneStats, SlideImage, Tile, DEFAULT_MAX_MISSING, DEFAULT_THUMBNAIL_MAX_SIDE,
};
use crate::synthetic::{make_synthetic, SyntheticConfig, SyntheticDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub tile_size: usize,
    pub min_tissue: f64,
    pub max_missing: f64,
    pub thumbnail_max_side: usize,
    pub test_fraction: f64,
    pub log1p: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            tile_size: crate::preprocess::DEFAULT_TILE_SIZE,
            min_tissue: crate::preprocess::DEFAULT_MIN_TISSUE,
            max_missing: DEFAULT_MAX_MISSING,
            thumbnail_max_side: DEFAULT_THUMBNAIL_MAX_SIDE,
            test_fraction: 0.2,
            log1p: false,
        }
    }
}

/// Segments and tiles a slide.
pub fn tile_slide(slide: &SlideImage, c: &PreprocessConfig) -> Result<Vec<Tile>> {
    let mask = segment_tissue(slide, c.thumbnail_max_side)?;
    extract_tiles(slide, &mask, c.tile_size, c.min_tissue)
}

/// Native patch rows for the given tiles of `slide`.
pub fn native_image(encoders: &FrozenEncoders, store: &ParamStore, slide: &SlideImage, tiles: &[Tile]) -> Result<crate::tensor::Matrix> {
    let crops: Vec<_> = tiles.iter().map(|t| slide.crop(t.origin_x, t.origin_y, t.size)).collect();
    encoders.image.encode_native(store, &crops)
}

/// Native token rows of the case summary.
pub fn native_text(encoders: &FrozenEncoders, store: &ParamStore, record: &ClinicalRecord, max_tokens: usize) -> Result<crate::tensor::Matrix> {
    encoders.text.encode_native(store, &serialize_clinical_summary(record), max_tokens)
}

/// Preprocessed expression plus split, in the layout the trainer consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCohorts {
    pub split: DatasetSplit,
    pub stats: GeneStats,
    pub train: Cohort,
    pub test: Cohort,
    /// Class index per case id, when labels are known.
    pub labels: BTreeMap<String, usize>,
}

/// Filters and standardizes expression, splits cases, and pairs each case
/// with its native embeddings.
pub fn prepare_cohorts(
    expression: &ExpressionMatrix,
    inputs: &BTreeMap<String, CaseInputs>,
    config: &PreprocessConfig,
    seed: u64,
) -> Result<(DatasetSplit, GeneStats, Cohort, Cohort)> {
    let filtered = filter_genes(expression, config.max_missing)?;
    let ids: Vec<String> = filtered.sample_ids.iter().filter(|id| inputs.contains_key(*id)).cloned().collect();
    let split = make_split(&ids, config.test_fraction, seed)?;
    let (z, stats) = zscore_fit_transform(&filtered, &split, config.log1p)?;
    let index = z.sample_index();
    let cohort = |ids: &[String]| -> Result<Cohort> {
        let rows: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
        let cases = ids.iter().map(|id| inputs[id].clone()).collect();
        Cohort::new(cases, z.values.select_rows(&rows))
    };
    let train = cohort(&split.train_ids)?;
    let test = cohort(&split.test_ids)?;
    Ok((split, stats, train, test))
}

/// Synthetic cohort pushed through the full preprocessing and stub encoders.
pub fn prepare_synthetic(synth: &SyntheticConfig, config: &PreprocessConfig, max_tokens: usize, seed: u64) -> Result<(SyntheticDataset, PreparedCohorts)> {
    let ds = make_synthetic(synth)?;
    let mut store = ParamStore::new();
    let encoders = FrozenEncoders::new(&mut store);
    let mut inputs = BTreeMap::new();
    for (slide, record) in ds.slides.iter().zip(&ds.records) {
        let tiles = tile_slide(slide, config)?;
        if tiles.is_empty() {
            return Err(Error::NoTiles);
        }
        let case = CaseInputs {
            case_id: record.case_id.clone(),
            image: native_image(&encoders, &store, slide, &tiles)?,
            text: native_text(&encoders, &store, record, max_tokens)?,
            disease_type: record.disease_type.clone(),
            primary_site: record.primary_site.clone(),
        };
        inputs.insert(record.case_id.clone(), case);
    }
    let (split, stats, train, test) = prepare_cohorts(&ds.expression, &inputs, config, seed)?;
    let labels = ds.records.iter().zip(&ds.labels).map(|(r, &l)| (r.case_id.clone(), l)).collect();
    Ok((ds, PreparedCohorts { split, stats, train, test, labels }))
}

/// Class index of each case of `cohort`.
pub fn cohort_labels(cohort: &Cohort, labels: &BTreeMap<String, usize>) -> Result<Vec<usize>> {
    cohort
        .cases
        .iter()
        .map(|c| labels.get(&c.case_id).copied().ok_or_else(|| Error::MissingLabels(format!("no label for {}", c.case_id))))
        .collect()
}
