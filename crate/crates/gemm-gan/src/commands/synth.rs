use std::path::{Path, PathBuf};

use gemm_core::fusion::FusionConfig;
use gemm_core::synthetic::{make_synthetic as synthesize, SyntheticConfig};

use crate::config::{Paths, RunConfig};
use crate::error::Result;
use crate::formats::{write_atomic, write_expression, write_ndjson, write_slide_png};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthArgs {
    pub n_cases: usize,
    pub genes: usize,
    pub classes: usize,
    pub slide_size: usize,
    pub seed: u64,
}

impl Default for SynthArgs {
    fn default() -> Self {
        Self { n_cases: 200, genes: 16, classes: 2, slide_size: 64, seed: 0 }
    }
}

/// Desk-scale model settings matched to the synthetic slides.
pub fn toy_config(out: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.paths = Paths {
        slides: Some(out.join("slides")),
        expression: Some(out.join("expression.tsv")),
        metadata: Some(out.join("clinical.jsonl")),
        workdir: out.join("work"),
    };
    cfg.preprocess.tile_size = 16;
    cfg.model.fusion = FusionConfig { d: 16, heads: 4, depth: 2, ffn_mult: 2, dropout: 0.1 };
    cfg.model.d_noise = 16;
    cfg.model.n_patches = 8;
    cfg.model.hidden = vec![128, 128];
    cfg.model.max_tokens = 64;
    cfg
}

/// Writes a synthetic cohort (slides, expression table, clinical records)
/// and a matching `config.toml` under `out`. Returns the config path.
pub fn make_synthetic(args: &SynthArgs, out: &Path) -> Result<PathBuf> {
    let mut sc = SyntheticConfig::new(args.n_cases, args.genes, args.classes, args.seed);
    sc.slide_size = args.slide_size;
    let ds = synthesize(&sc)?;
    // slides are looked up by case id
    for (slide, record) in ds.slides.iter().zip(&ds.records) {
        write_slide_png(&out.join("slides").join(format!("{}.png", record.case_id)), slide)?;
    }
    write_expression(&out.join("expression.tsv"), &ds.expression)?;
    write_ndjson(&out.join("clinical.jsonl"), &ds.records)?;
    let cfg = toy_config(out, args.seed);
    let path = out.join("config.toml");
    write_atomic(&path, cfg.to_toml()?.as_bytes())?;
    Ok(path)
}
