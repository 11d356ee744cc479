//! On-disk formats of the pipeline artifacts.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use gemm_core::preprocess::{ClinicalRecord, DatasetSplit, ExpressionMatrix, SlideImage, TileImage, Tile};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(AppError::io(path))
}

/// Writes through a temporary sibling and renames, so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(AppError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(AppError::io(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| AppError::format(path, e))
}

/// One JSON value per line.
pub fn write_ndjson<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| AppError::format(path, e))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(AppError::io(path))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(AppError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| AppError::format(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(rows)
}

/// Appends one record to a newline-delimited log.
pub fn append_ndjson<T: Serialize>(path: &Path, row: &T) -> Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(AppError::io(path))?;
    let mut line = serde_json::to_vec(row).map_err(|e| AppError::format(path, e))?;
    line.push(b'\n');
    file.write_all(&line).map_err(AppError::io(path))
}

/// Tab-separated table: header `sample_id` then gene ids; an empty field is missing.
pub fn read_expression(path: &Path) -> Result<ExpressionMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_path(path)
        .map_err(|e| AppError::format(path, e))?;
    let header = reader.headers().map_err(|e| AppError::format(path, e))?.clone();
    if header.is_empty() {
        return Err(AppError::format(path, "empty header"));
    }
    let gene_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut sample_ids = Vec::new();
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| AppError::format(path, e))?;
        let mut fields = record.iter();
        sample_ids.push(fields.next().unwrap_or_default().to_string());
        let row = fields
            .map(|f| match f.trim() {
                "" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|_| AppError::format(path, format!("row {}: bad number `{v}`", n + 2))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(ExpressionMatrix::from_options(sample_ids, gene_ids, &rows)?)
}

pub fn write_expression(path: &Path, m: &ExpressionMatrix) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(&mut out);
        let mut header = vec!["sample_id".to_string()];
        header.extend(m.gene_ids.iter().cloned());
        w.write_record(&header).map_err(|e| AppError::format(path, e))?;
        for (i, id) in m.sample_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend((0..m.n_genes()).map(|j| m.get(i, j).map_or(String::new(), |v| format!("{v}"))));
            w.write_record(&row).map_err(|e| AppError::format(path, e))?;
        }
        w.flush().map_err(AppError::io(path))?;
    }
    write_atomic(path, &out)
}

pub fn read_clinical(path: &Path) -> Result<Vec<ClinicalRecord>> {
    read_ndjson(path)
}

/// Split file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub fraction: f64,
}

impl SplitFile {
    pub fn new(split: &DatasetSplit, seed: u64, fraction: f64) -> Self {
        Self { train: split.train_ids.clone(), test: split.test_ids.clone(), seed, fraction }
    }

    pub fn split(&self) -> DatasetSplit {
        DatasetSplit { train_ids: self.train.clone(), test_ids: self.test.clone() }
    }
}

/// One manifest record per retained tile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub slide_id: String,
    pub origin_x: usize,
    pub origin_y: usize,
    pub size: usize,
    pub tissue_fraction: f64,
}

impl From<&Tile> for ManifestRow {
    fn from(t: &Tile) -> Self {
        Self { slide_id: t.slide_id.clone(), origin_x: t.origin_x, origin_y: t.origin_y, size: t.size, tissue_fraction: t.tissue_fraction }
    }
}

impl ManifestRow {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.png", self.slide_id, self.origin_x, self.origin_y)
    }
}

fn encode_png(width: usize, height: usize, rgb: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| AppError::format(path, e))?;
        w.write_image_data(rgb).map_err(|e| AppError::format(path, e))?;
    }
    Ok(out)
}

/// Decodes an 8-bit PNG into RGB, dropping alpha and expanding grey.
fn decode_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(AppError::io(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| AppError::format(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| AppError::format(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let rgb = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(AppError::format(path, "unexpanded palette image")),
    };
    Ok((w, h, rgb))
}

pub fn write_slide_png(path: &Path, slide: &SlideImage) -> Result<()> {
    write_atomic(path, &encode_png(slide.width, slide.height, &slide.pixels, path)?)
}

pub fn read_slide_png(path: &Path, slide_id: &str) -> Result<SlideImage> {
    let (w, h, rgb) = decode_png(path)?;
    Ok(SlideImage::new(slide_id, w, h, rgb)?)
}

pub fn write_tile_png(path: &Path, tile: &TileImage) -> Result<()> {
    write_atomic(path, &encode_png(tile.size, tile.size, &tile.pixels, path)?)
}

pub fn read_tile_png(path: &Path) -> Result<TileImage> {
    let (w, h, pixels) = decode_png(path)?;
    if w != h {
        return Err(AppError::format(path, format!("tile is {w}x{h}, expected a square")));
    }
    Ok(TileImage { size: w, pixels })
}

/// Matrix as a TSV with a header row of column names.
pub fn write_table(path: &Path, header: &[String], rows: &[(String, Vec<String>)]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(&mut out);
        w.write_record(header).map_err(|e| AppError::format(path, e))?;
        for (label, cells) in rows {
            let mut r = vec![label.clone()];
            r.extend(cells.iter().cloned());
            w.write_record(&r).map_err(|e| AppError::format(path, e))?;
        }
        w.flush().map_err(AppError::io(path))?;
    }
    write_atomic(path, &out)
}
