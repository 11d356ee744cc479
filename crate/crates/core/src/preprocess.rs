//! Slide tiling, expression cleaning, clinical text serialization and splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream, tags};
use crate::tensor::Matrix;

/// Default tile edge in pixels.
pub const DEFAULT_TILE_SIZE: usize = 256;
/// Tiles must carry strictly more tissue than this fraction.
pub const DEFAULT_MIN_TISSUE: f64 = 0.2;
/// Genes missing in more than this fraction of samples are dropped.
pub const DEFAULT_MAX_MISSING: f64 = 0.9;
pub const DEFAULT_THUMBNAIL_MAX_SIDE: usize = 2048;

/// An RGB slide, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideImage {
    pub slide_id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub mpp: Option<f64>,
}

impl SlideImage {
    pub fn new(slide_id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::DimensionMismatch { context: "slide pixel buffer", expected: width * height * 3, got: pixels.len() });
        }
        Ok(Self { slide_id: slide_id.into(), width, height, pixels, mpp: None })
    }

    pub fn filled(slide_id: impl Into<String>, width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { slide_id: slide_id.into(), width, height, pixels, mpp: None }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = (y * self.width + x) * 3;
        [self.pixels[k], self.pixels[k + 1], self.pixels[k + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let k = (y * self.width + x) * 3;
        self.pixels[k..k + 3].copy_from_slice(&rgb);
    }

    /// Copies out the `size × size` square at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize) -> TileImage {
        assert!(x + size <= self.width && y + size <= self.height, "crop outside slide");
        let mut pixels = Vec::with_capacity(size * size * 3);
        for row in y..y + size {
            let start = (row * self.width + x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + size * 3]);
        }
        TileImage { size, pixels }
    }
}

/// Square RGB patch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileImage {
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl TileImage {
    pub fn filled(size: usize, rgb: [u8; 3]) -> Self {
        Self { size, pixels: rgb.iter().copied().cycle().take(size * size * 3).collect() }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = (y * self.size + x) * 3;
        [self.pixels[k], self.pixels[k + 1], self.pixels[k + 2]]
    }
}

/// A retained grid cell of a slide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub slide_id: String,
    pub origin_x: usize,
    pub origin_y: usize,
    pub size: usize,
    pub tissue_fraction: f64,
}

impl Tile {
    /// File stem `{slide_id}_{x}_{y}`.
    pub fn stem(&self) -> String {
        format!("{}_{}_{}", self.slide_id, self.origin_x, self.origin_y)
    }
}

/// Binary tissue mask at thumbnail resolution. Each mask cell covers a
/// `scale × scale` block of slide pixels (clipped at the right and bottom edges).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TissueMask {
    pub width: usize,
    pub height: usize,
    pub scale: usize,
    pub data: Vec<bool>,
}

impl TissueMask {
    pub fn from_fn(width: usize, height: usize, scale: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, scale, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Otsu's threshold over a 256-bin histogram.
///
/// Returns `t ∈ [1, 255]` maximizing the between-class variance of the classes
/// `[0, t)` and `[t, 255]`; the smallest maximizer wins ties.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<u8> {
    let occupied = histogram.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        return Err(Error::SingleClassHistogram);
    }
    let total: u64 = histogram.iter().sum();
    let total_sum: u64 = histogram.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mut below = 0u64;
    let mut below_sum = 0u64;
    let mut best_t = 1u8;
    let mut best = f64::NEG_INFINITY;
    for t in 1..256usize {
        below += histogram[t - 1];
        below_sum += (t as u64 - 1) * histogram[t - 1];
        let above = total - below;
        let above_sum = total_sum - below_sum;
        let score = between_class_variance(below, below_sum, above, above_sum);
        if score > best {
            best = score;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// `w0 · w1 · (μ0 − μ1)²` from exact integer class weights and intensity sums.
/// An empty class scores zero.
pub fn between_class_variance(w0: u64, s0: u64, w1: u64, s1: u64) -> f64 {
    if w0 == 0 || w1 == 0 {
        return 0.0;
    }
    let (w0f, w1f) = (w0 as f64, w1 as f64);
    let m0 = s0 as f64 / w0f;
    let m1 = s1 as f64 / w1f;
    w0f * w1f * (m0 - m1) * (m0 - m1)
}

/// HSV saturation scaled to `0..=255`.
#[inline]
pub fn saturation(rgb: [u8; 3]) -> u8 {
    let max = rgb.iter().copied().max().unwrap_or(0);
    let min = rgb.iter().copied().min().unwrap_or(0);
    if max == 0 {
        return 0;
    }
    ((u32::from(max - min) * 255 + u32::from(max) / 2) / u32::from(max)) as u8
}

/// Box-downsampled thumbnail whose longer side is at most `max_side`.
/// Returns `(width, height, scale, rgb)`.
pub fn thumbnail(slide: &SlideImage, max_side: usize) -> (usize, usize, usize, Vec<[u8; 3]>) {
    let longest = slide.width.max(slide.height);
    let scale = longest.div_ceil(max_side.max(1)).max(1);
    let tw = slide.width.div_ceil(scale);
    let th = slide.height.div_ceil(scale);
    let mut out = Vec::with_capacity(tw * th);
    for ty in 0..th {
        for tx in 0..tw {
            let (x0, y0) = (tx * scale, ty * scale);
            let (x1, y1) = ((x0 + scale).min(slide.width), (y0 + scale).min(slide.height));
            let mut acc = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = slide.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += u64::from(p[c]);
                    }
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as u64;
            out.push([
                ((acc[0] + n / 2) / n) as u8,
                ((acc[1] + n / 2) / n) as u8,
                ((acc[2] + n / 2) / n) as u8,
            ]);
        }
    }
    (tw, th, scale, out)
}

/// Tissue mask from Otsu's threshold on the saturation of a thumbnail.
/// A thumbnail pixel is tissue when its saturation falls in the upper Otsu
/// class, i.e. `saturation >= threshold`.
pub fn segment_tissue(slide: &SlideImage, thumbnail_max_side: usize) -> Result<TissueMask> {
    let (w, h, scale, thumb) = thumbnail(slide, thumbnail_max_side);
    let sats: Vec<u8> = thumb.iter().map(|&p| saturation(p)).collect();
    let mut hist = [0u64; 256];
    for &s in &sats {
        hist[s as usize] += 1;
    }
    let t = otsu_threshold(&hist)?;
    Ok(TissueMask { width: w, height: h, scale, data: sats.iter().map(|&s| s >= t).collect() })
}

/// Fraction of the `size × size` slide footprint at `(x, y)` covered by tissue.
pub fn tissue_fraction(mask: &TissueMask, x: usize, y: usize, size: usize) -> f64 {
    let s = mask.scale;
    let (x1, y1) = (x + size, y + size);
    let mut covered = 0usize;
    for my in y / s..y1.div_ceil(s).min(mask.height) {
        let oy = (y1.min((my + 1) * s)).saturating_sub(y.max(my * s));
        for mx in x / s..x1.div_ceil(s).min(mask.width) {
            if mask.get(mx, my) {
                let ox = (x1.min((mx + 1) * s)).saturating_sub(x.max(mx * s));
                covered += ox * oy;
            }
        }
    }
    covered as f64 / (size * size) as f64
}

/// Non-overlapping `size`-stride grid tiles whose tissue fraction exceeds `min_tissue`.
pub fn extract_tiles(slide: &SlideImage, mask: &TissueMask, size: usize, min_tissue: f64) -> Result<Vec<Tile>> {
    if size == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    if !(0.0..1.0).contains(&min_tissue) {
        return Err(Error::InvalidArgument(format!("min_tissue {min_tissue} outside [0, 1)")));
    }
    let mut tiles = Vec::new();
    let mut y = 0;
    while y + size <= slide.height {
        let mut x = 0;
        while x + size <= slide.width {
            let fraction = tissue_fraction(mask, x, y, size);
            if fraction > min_tissue {
                tiles.push(Tile {
                    slide_id: slide.slide_id.clone(),
                    origin_x: x,
                    origin_y: y,
                    size,
                    tissue_fraction: fraction,
                });
            }
            x += size;
        }
        y += size;
    }
    Ok(tiles)
}

/// Samples × genes table with an explicit missing-value mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMatrix {
    pub sample_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    pub values: Matrix,
    pub missing: Vec<bool>,
}

impl ExpressionMatrix {
    /// Fully observed matrix.
    pub fn dense(sample_ids: Vec<String>, gene_ids: Vec<String>, values: Matrix) -> Self {
        let missing = vec![false; values.len()];
        Self { sample_ids, gene_ids, values, missing }
    }

    /// Builds from optional entries; `None` marks a missing value.
    pub fn from_options(sample_ids: Vec<String>, gene_ids: Vec<String>, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let g = gene_ids.len();
        let mut values = Matrix::zeros(rows.len(), g);
        let mut missing = vec![false; rows.len() * g];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != g {
                return Err(Error::DimensionMismatch { context: "expression row", expected: g, got: row.len() });
            }
            for (j, v) in row.iter().enumerate() {
                match v {
                    Some(x) => values[(i, j)] = *x,
                    None => missing[i * g + j] = true,
                }
            }
        }
        if sample_ids.len() != rows.len() {
            return Err(Error::DimensionMismatch { context: "sample ids", expected: rows.len(), got: sample_ids.len() });
        }
        Ok(Self { sample_ids, gene_ids, values, missing })
    }

    pub fn n_samples(&self) -> usize {
        self.values.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[i * self.n_genes() + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (!self.is_missing(i, j)).then(|| self.values[(i, j)])
    }

    pub fn select_genes(&self, genes: &[usize]) -> Self {
        let g = self.n_genes();
        let mut missing = Vec::with_capacity(self.n_samples() * genes.len());
        for i in 0..self.n_samples() {
            missing.extend(genes.iter().map(|&j| self.missing[i * g + j]));
        }
        Self {
            sample_ids: self.sample_ids.clone(),
            gene_ids: genes.iter().map(|&j| self.gene_ids[j].clone()).collect(),
            values: self.values.select_cols(genes),
            missing,
        }
    }

    pub fn select_samples(&self, rows: &[usize]) -> Self {
        let g = self.n_genes();
        let mut missing = Vec::with_capacity(rows.len() * g);
        for &i in rows {
            missing.extend_from_slice(&self.missing[i * g..(i + 1) * g]);
        }
        Self {
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
            values: self.values.select_rows(rows),
            missing,
        }
    }

    pub fn sample_index(&self) -> BTreeMap<&str, usize> {
        self.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Drops genes whose missing fraction exceeds `max_missing`; column order is kept.
pub fn filter_genes(m: &ExpressionMatrix, max_missing: f64) -> Result<ExpressionMatrix> {
    let n = m.n_samples();
    if n == 0 {
        return Err(Error::TooFewSamples { got: 0, min: 1 });
    }
    let keep: Vec<usize> = (0..m.n_genes())
        .filter(|&j| {
            let missing = (0..n).filter(|&i| m.is_missing(i, j)).count();
            missing as f64 / n as f64 <= max_missing
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::AllGenesDropped);
    }
    Ok(m.select_genes(&keep))
}

/// Per-gene statistics fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneStats {
    pub gene_ids: Vec<String>,
    pub median: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation; zero marks a constant gene.
    pub std: Vec<f64>,
    pub log1p: bool,
}

impl GeneStats {
    /// Imputes, optionally log-transforms and standardizes with the fitted statistics.
    /// The result has no missing entries.
    pub fn transform(&self, m: &ExpressionMatrix) -> Result<ExpressionMatrix> {
        if m.gene_ids != self.gene_ids {
            return Err(Error::DimensionMismatch { context: "gene set", expected: self.gene_ids.len(), got: m.n_genes() });
        }
        let mut values = Matrix::zeros(m.n_samples(), m.n_genes());
        for i in 0..m.n_samples() {
            for j in 0..m.n_genes() {
                let raw = m.get(i, j).map_or(self.median[j], |x| self.prepare(x));
                values[(i, j)] = if self.std[j] > 0.0 { (raw - self.mean[j]) / self.std[j] } else { 0.0 };
            }
        }
        Ok(ExpressionMatrix::dense(m.sample_ids.clone(), m.gene_ids.clone(), values))
    }

    fn prepare(&self, x: f64) -> f64 {
        if self.log1p {
            math::ln_1p(x.max(0.0))
        } else {
            x
        }
    }
}

/// Fits imputation and z-score statistics on the training rows of `m` and
/// applies them to every row.
pub fn zscore_fit_transform(m: &ExpressionMatrix, split: &DatasetSplit, log1p: bool) -> Result<(ExpressionMatrix, GeneStats)> {
    let index = m.sample_index();
    let train_rows: Vec<usize> = split.train_ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect();
    if train_rows.is_empty() {
        return Err(Error::TooFewSamples { got: 0, min: 1 });
    }
    let g = m.n_genes();
    let mut stats = GeneStats {
        gene_ids: m.gene_ids.clone(),
        median: vec![0.0; g],
        mean: vec![0.0; g],
        std: vec![0.0; g],
        log1p,
    };
    for j in 0..g {
        let prep = |x: f64| if log1p { math::ln_1p(x.max(0.0)) } else { x };
        let mut observed: Vec<f64> = train_rows.iter().filter_map(|&i| m.get(i, j)).map(prep).collect();
        if observed.is_empty() {
            observed = (0..m.n_samples()).filter_map(|i| m.get(i, j)).map(prep).collect();
        }
        let median = median(&mut observed);
        let column: Vec<f64> = train_rows.iter().map(|&i| m.get(i, j).map_or(median, prep)).collect();
        let n = column.len() as f64;
        let mean = column.iter().sum::<f64>() / n;
        let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = math::sqrt(var);
        stats.median[j] = median;
        stats.mean[j] = mean;
        // relative guard: a column of identical floats can leave rounding residue
        stats.std[j] = if std > 1e-12 * mean.abs().max(1.0) { std } else { 0.0 };
    }
    let out = stats.transform(m)?;
    Ok((out, stats))
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Case-level clinical metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub case_id: String,
    pub disease_type: String,
    pub primary_site: String,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub free_fields: BTreeMap<String, String>,
}

const MAX_SUMMARY_WORDS: usize = 300;

fn is_irrelevant_field(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    k == "id"
        || k.ends_with("_id")
        || k.ends_with("_ids")
        || ["uuid", "barcode", "path", "file", "url", "submitter"].iter().any(|p| k.contains(p))
}

fn humanize(key: &str) -> String {
    key.replace('_', " ")
}

/// Deterministic prose summary of a clinical record (50–300 words).
///
/// Identifier and file-reference fields are omitted.
pub fn serialize_clinical_summary(r: &ClinicalRecord) -> String {
    let site = if r.primary_site.is_empty() { "an unrecorded site" } else { r.primary_site.as_str() };
    let disease = if r.disease_type.is_empty() { "an unrecorded diagnosis" } else { r.disease_type.as_str() };
    let mut text = format!(
        "Clinical summary. The patient was diagnosed with {disease}, with the primary tumor site recorded as {site}. "
    );
    let demo: Vec<String> = r
        .demographics
        .iter()
        .filter(|(k, v)| !is_irrelevant_field(k) && !v.is_empty())
        .map(|(k, v)| format!("{} {}", humanize(k), v))
        .collect();
    if demo.is_empty() {
        text.push_str("No demographic details were recorded for this patient. ");
    } else {
        text.push_str(&format!("Demographic details: {}. ", demo.join(", ")));
    }
    text.push_str(&format!(
        "The examined tissue section was obtained from the {site} and the diagnosis in the case record is {disease}. \
         The slide was prepared with routine hematoxylin and eosin staining for histopathology review, \
         and the matched expression profile was measured from tumor material of the same case. "
    ));
    let extra: Vec<String> = r
        .free_fields
        .iter()
        .filter(|(k, v)| !is_irrelevant_field(k) && !v.is_empty())
        .map(|(k, v)| format!("{}: {}", humanize(k), v))
        .collect();
    if extra.is_empty() {
        text.push_str("No further clinical conditions were documented.");
    } else {
        text.push_str(&format!("Further clinical conditions: {}.", extra.join("; ")));
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() > MAX_SUMMARY_WORDS {
        let mut cut = words[..MAX_SUMMARY_WORDS].join(" ");
        if !cut.ends_with('.') {
            cut.push('.');
        }
        cut
    } else {
        words.join(" ")
    }
}

/// Case-level train/test partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.iter().any(|t| t == id)
    }
}

/// Random case-level split with `round(n · test_fraction)` test cases
/// (at least one case on each side). Both partitions keep input order.
pub fn make_split(case_ids: &[String], test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    const MIN_CASES: usize = 5;
    let n = case_ids.len();
    if n < MIN_CASES {
        return Err(Error::TooFewCases { got: n, min: MIN_CASES });
    }
    let unique: BTreeSet<&String> = case_ids.iter().collect();
    if unique.len() != n {
        return Err(Error::InvalidArgument("duplicate case ids".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n_test = (math::round(n as f64 * test_fraction) as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, tags::SPLIT, 0));
    let test: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let mut split = DatasetSplit { train_ids: Vec::new(), test_ids: Vec::new() };
    for (i, id) in case_ids.iter().enumerate() {
        if test.contains(&i) {
            split.test_ids.push(id.clone());
        } else {
            split.train_ids.push(id.to_string());
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn otsu_two_spikes_picks_smallest_separator() {
        let mut h = [0u64; 256];
        h[0] = 100;
        h[255] = 100;
        assert_eq!(otsu_threshold(&h).unwrap(), 1);
    }

    #[test]
    fn otsu_single_bin_is_an_error() {
        let mut h = [0u64; 256];
        h[128] = 1000;
        assert_eq!(otsu_threshold(&h), Err(Error::SingleClassHistogram));
        assert_eq!(otsu_threshold(&[0; 256]), Err(Error::SingleClassHistogram));
    }

    #[test]
    fn white_slide_cannot_be_segmented() {
        let slide = SlideImage::filled("w", 64, 64, [255, 255, 255]);
        assert_eq!(segment_tissue(&slide, 2048), Err(Error::SingleClassHistogram));
    }

    #[test]
    fn magenta_left_half_is_tissue() {
        let mut slide = SlideImage::filled("m", 40, 30, [255, 255, 255]);
        for y in 0..30 {
            for x in 0..20 {
                slide.set_pixel(x, y, [255, 0, 255]);
            }
        }
        let mask = segment_tissue(&slide, 2048).unwrap();
        assert_eq!((mask.width, mask.height, mask.scale), (40, 30, 1));
        for y in 0..30 {
            for x in 0..40 {
                assert_eq!(mask.get(x, y), x < 20, "({x},{y})");
            }
        }
    }

    #[test]
    fn thumbnail_keeps_aspect_ratio() {
        let slide = SlideImage::filled("s", 300, 120, [10, 200, 30]);
        let (w, h, scale, _) = thumbnail(&slide, 100);
        assert_eq!(scale, 3);
        assert_eq!((w, h), (100, 40));
        let ratio = |a: usize, b: usize| a as f64 / b as f64;
        assert!((ratio(w, h) - ratio(300, 120)).abs() < 0.05);
    }

    #[test]
    fn tiling_full_half_and_empty_masks() {
        let slide = SlideImage::filled("s", 512, 512, [0, 0, 0]);
        let full = TissueMask::from_fn(512, 512, 1, |_, _| true);
        let tiles = extract_tiles(&slide, &full, 256, 0.2).unwrap();
        assert_eq!(tiles.len(), 4);
        assert!(tiles.iter().all(|t| t.tissue_fraction == 1.0));

        let empty = TissueMask::from_fn(512, 512, 1, |_, _| false);
        assert!(extract_tiles(&slide, &empty, 256, 0.2).unwrap().is_empty());

        let half = TissueMask::from_fn(512, 512, 1, |x, _| x < 256);
        let tiles = extract_tiles(&slide, &half, 256, 0.2).unwrap();
        assert_eq!(tiles.len(), 2);
        assert!(tiles.iter().all(|t| t.origin_x == 0));
    }

    #[test]
    fn tissue_fraction_on_downsampled_mask_counts_slide_pixels() {
        // 8x8 slide, mask scale 4: the top-left mask cell covers 16 slide pixels
        let mask = TissueMask::from_fn(2, 2, 4, |x, y| x == 0 && y == 0);
        assert_eq!(tissue_fraction(&mask, 0, 0, 8), 16.0 / 64.0);
        assert_eq!(tissue_fraction(&mask, 2, 2, 4), 4.0 / 16.0);
    }

    #[test]
    fn tile_threshold_is_strict() {
        let slide = SlideImage::filled("s", 10, 10, [0, 0, 0]);
        // exactly 20% tissue: 2 of 10 columns
        let mask = TissueMask::from_fn(10, 10, 1, |x, _| x < 2);
        assert!(extract_tiles(&slide, &mask, 10, 0.2).unwrap().is_empty());
        let mask = TissueMask::from_fn(10, 10, 1, |x, y| x < 2 || (x == 2 && y == 0));
        assert_eq!(extract_tiles(&slide, &mask, 10, 0.2).unwrap().len(), 1);
    }

    fn matrix_with_missing(missing_in_gene0: usize, n: usize) -> ExpressionMatrix {
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| vec![if i < missing_in_gene0 { None } else { Some(i as f64) }, Some(1.0 + i as f64)])
            .collect();
        ExpressionMatrix::from_options(ids(n), vec!["g0".into(), "g1".into()], &rows).unwrap()
    }

    #[test]
    fn filter_genes_missing_rule() {
        let m = matrix_with_missing(19, 20);
        assert_eq!(filter_genes(&m, 0.9).unwrap().gene_ids, vec!["g1".to_string()]);
        let m = matrix_with_missing(18, 20);
        assert_eq!(filter_genes(&m, 0.9).unwrap().gene_ids.len(), 2);
        let m = matrix_with_missing(9, 10);
        assert_eq!(filter_genes(&m, 0.9).unwrap().gene_ids.len(), 2, "exactly 90% missing is kept");
        let m = matrix_with_missing(0, 10);
        assert_eq!(filter_genes(&m, 0.9).unwrap(), m);
        let all_missing = ExpressionMatrix::from_options(ids(2), vec!["g".into()], &[vec![None], vec![None]]).unwrap();
        assert_eq!(filter_genes(&all_missing, 0.9), Err(Error::AllGenesDropped));
    }

    #[test]
    fn zscore_hand_example_and_constant_gene() {
        let m = ExpressionMatrix::dense(
            ids(3),
            vec!["a".into(), "b".into()],
            Matrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]),
        );
        let split = DatasetSplit { train_ids: ids(3), test_ids: vec![] };
        let (z, stats) = zscore_fit_transform(&m, &split, false).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for i in 0..3 {
            assert!((z.values[(i, 0)] - expect[i]).abs() < 1e-12);
            assert_eq!(z.values[(i, 1)], 0.0);
        }
        assert_eq!(stats.std[1], 0.0);
    }

    #[test]
    fn zscore_uses_train_statistics_and_train_median() {
        let rows = vec![vec![Some(1.0)], vec![Some(3.0)], vec![None], vec![Some(100.0)]];
        let m = ExpressionMatrix::from_options(ids(4), vec!["g".into()], &rows).unwrap();
        let split = DatasetSplit { train_ids: vec!["c0".into(), "c1".into(), "c2".into()], test_ids: vec!["c3".into()] };
        let (z, stats) = zscore_fit_transform(&m, &split, false).unwrap();
        // train column after imputation: [1, 3, 2]
        assert_eq!(stats.median[0], 2.0);
        assert!((stats.mean[0] - 2.0).abs() < 1e-15);
        assert!(z.values[(2, 0)].abs() < 1e-15);
        assert!(z.values[(3, 0)] > 50.0);
        assert!(z.missing.iter().all(|&b| !b));
    }

    #[test]
    fn summary_contains_fields_and_skips_identifiers() {
        let mut r = ClinicalRecord {
            case_id: "TCGA-XX".into(),
            disease_type: "LUAD".into(),
            primary_site: "Lung".into(),
            demographics: BTreeMap::new(),
            free_fields: BTreeMap::new(),
        };
        r.demographics.insert("age".into(), "61".into());
        r.demographics.insert("sex".into(), "F".into());
        let s = serialize_clinical_summary(&r);
        for needle in ["LUAD", "Lung", "61"] {
            assert!(s.contains(needle), "{s}");
        }
        let words = s.split_whitespace().count();
        assert!((50..=300).contains(&words), "{words} words");
        assert_eq!(s, serialize_clinical_summary(&r.clone()));

        r.free_fields.insert("slide_file_path".into(), "/data/x.svs".into());
        r.free_fields.insert("sample_id".into(), "S-1".into());
        r.free_fields.insert("tumor_stage".into(), "stage II".into());
        let s = serialize_clinical_summary(&r);
        assert!(!s.contains("/data/x.svs") && !s.contains("S-1"));
        assert!(s.contains("stage II"));
    }

    #[test]
    fn summary_is_capped() {
        let mut r = ClinicalRecord {
            case_id: "c".into(),
            disease_type: "BRCA".into(),
            primary_site: "Breast".into(),
            demographics: BTreeMap::new(),
            free_fields: BTreeMap::new(),
        };
        for i in 0..100 {
            r.free_fields.insert(format!("note{i:03}"), "several extra words here".into());
        }
        assert_eq!(serialize_clinical_summary(&r).split_whitespace().count(), 300);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = make_split(&ids(10), 0.2, 7).unwrap();
        assert_eq!((s.train_ids.len(), s.test_ids.len()), (8, 2));
        assert_eq!(s, make_split(&ids(10), 0.2, 7).unwrap());
        let a = make_split(&ids(100), 0.2, 1).unwrap();
        let b = make_split(&ids(100), 0.2, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(make_split(&ids(4), 0.2, 1), Err(Error::TooFewCases { got: 4, min: 5 }));
    }
}
