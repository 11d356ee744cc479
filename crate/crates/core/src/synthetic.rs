//! Deterministic toy cohort: small rendered slides, clinical records and
//! class-structured expression profiles.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::preprocess::{ClinicalRecord, ExpressionMatrix, SlideImage};
use crate::rng::{standard_normal, stream, tags};
use crate::tensor::Matrix;

const DISEASES: [(&str, &str); 8] = [
    ("LUAD", "Lung"),
    ("BRCA", "Breast"),
    ("KIRC", "Kidney"),
    ("COAD", "Colon"),
    ("GBM", "Brain"),
    ("PRAD", "Prostate"),
    ("THCA", "Thyroid"),
    ("SKCM", "Skin"),
];

/// Disease code and primary site for class `k`.
pub fn class_names(k: usize) -> (String, String) {
    match DISEASES.get(k) {
        Some((d, s)) => ((*d).into(), (*s).into()),
        None => (format!("TYPE{k}"), format!("Site{k}")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_cases: usize,
    pub g: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub slide_size: usize,
    /// Additive raise of a marker gene for its class.
    pub marker_shift: f64,
    pub latent_factors: usize,
    pub noise: f64,
    pub missing_rate: f64,
}

impl SyntheticConfig {
    pub fn new(n_cases: usize, g: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            n_cases,
            g,
            n_classes,
            seed,
            slide_size: 64,
            marker_shift: 3.0,
            latent_factors: 3,
            noise: 0.3,
            missing_rate: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub slides: Vec<SlideImage>,
    pub records: Vec<ClinicalRecord>,
    pub expression: ExpressionMatrix,
    pub labels: Vec<usize>,
    /// Genes whose mean depends on the class.
    pub marker_genes: Vec<usize>,
}

/// Marker gene `j < g/2` is raised for class `j % n_classes`.
pub fn marker_class(j: usize, g: usize, n_classes: usize) -> Option<usize> {
    (j < g / 2).then_some(j % n_classes)
}

pub fn make_synthetic_dataset(n_cases: usize, g: usize, n_classes: usize, seed: u64) -> Result<SyntheticDataset> {
    make_synthetic(&SyntheticConfig::new(n_cases, g, n_classes, seed))
}

pub fn make_synthetic(c: &SyntheticConfig) -> Result<SyntheticDataset> {
    if c.n_classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", c.n_classes)));
    }
    if c.g < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 genes, got {}", c.g)));
    }
    if c.n_cases == 0 || c.slide_size < 8 {
        return Err(Error::InvalidArgument("empty cohort or slide side below 8 pixels".into()));
    }
    let g = c.g;
    let mut shape_rng = stream(c.seed, tags::SYNTH, 0);
    let baseline: Vec<f64> = (0..g).map(|_| shape_rng.random_range(2.0..8.0)).collect();
    let loadings = Matrix::from_fn(g, c.latent_factors, |_, _| {
        let sign = if shape_rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * shape_rng.random_range(0.6..1.2)
    });

    let mut slides = Vec::with_capacity(c.n_cases);
    let mut records = Vec::with_capacity(c.n_cases);
    let mut labels = Vec::with_capacity(c.n_cases);
    let mut rows = Vec::with_capacity(c.n_cases);
    let mut ids = Vec::with_capacity(c.n_cases);
    for i in 0..c.n_cases {
        let mut rng = stream(c.seed, tags::SYNTH, 1 + i as u64);
        let class = i % c.n_classes;
        let case_id = format!("case{i:04}");
        let factors: Vec<f64> = (0..c.latent_factors).map(|_| standard_normal(&mut rng)).collect();
        let mut row = Vec::with_capacity(g);
        for j in 0..g {
            let mut x = baseline[j] + c.noise * standard_normal(&mut rng);
            for (l, f) in factors.iter().enumerate() {
                x += 0.5 * loadings[(j, l)] * f;
            }
            if marker_class(j, g, c.n_classes) == Some(class) {
                x += c.marker_shift;
            }
            row.push((!rng.random_bool(c.missing_rate)).then_some(x));
        }
        rows.push(row);
        slides.push(render_slide(&case_id, class, factors.first().copied().unwrap_or(0.0), c.slide_size, &mut rng));
        records.push(make_record(&case_id, class, &mut rng));
        labels.push(class);
        ids.push(case_id);
    }
    let gene_ids = (0..g).map(|j| format!("GENE{j:05}")).collect();
    let expression = ExpressionMatrix::from_options(ids, gene_ids, &rows)?;
    let marker_genes = (0..g).filter(|&j| marker_class(j, g, c.n_classes).is_some()).collect();
    Ok(SyntheticDataset { slides, records, expression, labels, marker_genes })
}

fn class_color(class: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 6] = [
        [180.0, 60.0, 150.0],
        [90.0, 60.0, 190.0],
        [200.0, 110.0, 80.0],
        [70.0, 150.0, 120.0],
        [160.0, 160.0, 60.0],
        [60.0, 120.0, 200.0],
    ];
    let base = PALETTE[class % PALETTE.len()];
    let k = (class / PALETTE.len()) as f64;
    [base[0] - 15.0 * k, base[1], base[2] + 10.0 * k]
}

fn texture(class: usize, x: usize, y: usize) -> f64 {
    match class % 4 {
        0 => if (y / 3).is_multiple_of(2) { 1.0 } else { -1.0 },
        1 => if (x % 6 < 2) && (y % 6 < 2) { -1.5 } else { 0.5 },
        2 => if (x / 3).is_multiple_of(2) { 1.0 } else { -1.0 },
        _ => if ((x + y) / 4).is_multiple_of(2) { 1.0 } else { -1.0 },
    }
}

fn render_slide<R: Rng + ?Sized>(case_id: &str, class: usize, intensity: f64, side: usize, rng: &mut R) -> SlideImage {
    let mut slide = SlideImage::filled(format!("{case_id}_slide"), side, side, [245, 245, 245]);
    let s = side as f64;
    let cx = s * rng.random_range(0.45..0.55);
    let cy = s * rng.random_range(0.45..0.55);
    let rx = s * rng.random_range(0.33..0.42);
    let ry = s * rng.random_range(0.30..0.40);
    let color = class_color(class);
    let shade = 1.0 + 0.12 * intensity.clamp(-2.5, 2.5);
    for y in 0..side {
        for x in 0..side {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy > 1.0 {
                continue;
            }
            let t = 18.0 * texture(class, x, y);
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let v = color[ch] * shade + t + rng.random_range(-8.0..8.0);
                px[ch] = math::round(v.clamp(0.0, 255.0)) as u8;
            }
            slide.set_pixel(x, y, px);
        }
    }
    slide
}

fn make_record<R: Rng + ?Sized>(case_id: &str, class: usize, rng: &mut R) -> ClinicalRecord {
    let (disease_type, primary_site) = class_names(class);
    let mut demographics = BTreeMap::new();
    demographics.insert("age".into(), format!("{}", rng.random_range(35..85)));
    demographics.insert("sex".into(), if rng.random_bool(0.5) { "F".into() } else { "M".into() });
    let mut free_fields = BTreeMap::new();
    let stage = ["I", "II", "III", "IV"][rng.random_range(0..4)];
    free_fields.insert("tumor_stage".into(), format!("stage {stage}"));
    free_fields.insert("prior_treatment".into(), if rng.random_bool(0.3) { "yes".into() } else { "no".into() });
    free_fields.insert("slide_file_path".into(), format!("slides/{case_id}.png"));
    ClinicalRecord { case_id: case_id.into(), disease_type, primary_site, demographics, free_fields }
}
