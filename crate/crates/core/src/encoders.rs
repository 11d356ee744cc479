//! Frozen modality encoders, trainable projections to the shared width, and
//! patch subsampling.
//!
//! Native (pre-projection) embeddings never depend on trainable parameters, so
//! they can be computed once and cached; projections are applied inside the
//! training graph.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::nn::Linear;
use crate::params::{Fnv, Group, ParamId, ParamStore};
use crate::preprocess::TileImage;
use crate::rng::{normal_matrix, stream, tags};
use crate::tensor::Matrix;

/// Token cap for text encoders, CLS included.
pub const DEFAULT_MAX_TOKENS: usize = 256;
pub const STUB_IMAGE_DIM: usize = 12;
pub const STUB_TEXT_BUCKETS: usize = 64;

/// A frozen image encoder: one native feature row per tile.
pub trait PatchEncoder {
    fn name(&self) -> &str;
    fn native_dim(&self) -> usize;
    fn encode_tile(&self, store: &ParamStore, tile: &TileImage) -> Result<Vec<f64>>;

    fn encode_native(&self, store: &ParamStore, tiles: &[TileImage]) -> Result<Matrix> {
        if tiles.is_empty() {
            return Err(Error::NoTiles);
        }
        let mut data = Vec::with_capacity(tiles.len() * self.native_dim());
        for t in tiles {
            let row = self.encode_tile(store, t)?;
            check_dim("native patch features", self.native_dim(), row.len())?;
            data.extend(row);
        }
        Ok(Matrix::from_vec(tiles.len(), self.native_dim(), data))
    }
}

/// A frozen text encoder. Row 0 of the output is the CLS embedding.
pub trait TextEncoder {
    fn name(&self) -> &str;
    fn native_dim(&self) -> usize;
    fn encode_native(&self, store: &ParamStore, text: &str, max_tokens: usize) -> Result<Matrix>;
}

/// Colour and texture statistics followed by a frozen per-feature affine map.
///
/// Raw features, each in `[0, 1]` or `[-1, 1]`: mean R, G, B; std R, G, B;
/// mean and std of HSV saturation; mean absolute horizontal and vertical
/// luma differences; fraction of pixels with luma below 128; mean `(R - B)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StubImageEncoder {
    pub center: ParamId,
    pub scale: ParamId,
}

impl StubImageEncoder {
    pub fn new(store: &mut ParamStore) -> Self {
        let center = [0.5, 0.5, 0.5, 0.1, 0.1, 0.1, 0.3, 0.1, 0.05, 0.05, 0.5, 0.0];
        let scale = [4.0, 4.0, 4.0, 8.0, 8.0, 8.0, 3.0, 8.0, 8.0, 8.0, 2.0, 3.0];
        Self {
            center: store.add("encoder.image_stub.center", Group::Frozen, Matrix::row_vector(&center)),
            scale: store.add("encoder.image_stub.scale", Group::Frozen, Matrix::row_vector(&scale)),
        }
    }

    pub fn raw_features(tile: &TileImage) -> [f64; STUB_IMAGE_DIM] {
        let n = tile.size * tile.size;
        let nf = n as f64;
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut sat_sum = 0.0;
        let mut sat_sq = 0.0;
        let mut dark = 0usize;
        let mut rb = 0.0;
        let luma = |p: [u8; 3]| (299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2])) / 1000;
        for y in 0..tile.size {
            for x in 0..tile.size {
                let p = tile.pixel(x, y);
                for c in 0..3 {
                    let v = f64::from(p[c]) / 255.0;
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
                let s = f64::from(crate::preprocess::saturation(p)) / 255.0;
                sat_sum += s;
                sat_sq += s * s;
                if luma(p) < 128 {
                    dark += 1;
                }
                rb += (f64::from(p[0]) - f64::from(p[2])) / 255.0;
            }
        }
        let mut dx = 0.0;
        let mut dy = 0.0;
        for y in 0..tile.size {
            for x in 0..tile.size {
                let l = f64::from(luma(tile.pixel(x, y)));
                if x + 1 < tile.size {
                    dx += (f64::from(luma(tile.pixel(x + 1, y))) - l).abs();
                }
                if y + 1 < tile.size {
                    dy += (f64::from(luma(tile.pixel(x, y + 1))) - l).abs();
                }
            }
        }
        let pairs = (tile.size * tile.size.saturating_sub(1)).max(1) as f64;
        let std = |s: f64, sq: f64| math::sqrt((sq / nf - (s / nf) * (s / nf)).max(0.0));
        [
            sum[0] / nf,
            sum[1] / nf,
            sum[2] / nf,
            std(sum[0], sum_sq[0]),
            std(sum[1], sum_sq[1]),
            std(sum[2], sum_sq[2]),
            sat_sum / nf,
            std(sat_sum, sat_sq),
            dx / pairs / 255.0,
            dy / pairs / 255.0,
            dark as f64 / nf,
            rb / nf,
        ]
    }
}

impl PatchEncoder for StubImageEncoder {
    fn name(&self) -> &str {
        "image_stub"
    }

    fn native_dim(&self) -> usize {
        STUB_IMAGE_DIM
    }

    fn encode_tile(&self, store: &ParamStore, tile: &TileImage) -> Result<Vec<f64>> {
        if tile.size == 0 || tile.pixels.len() != tile.size * tile.size * 3 {
            return Err(Error::EncoderFailure(format!("malformed {}-pixel tile", tile.size)));
        }
        let raw = Self::raw_features(tile);
        let c = store.value(self.center).as_slice();
        let s = store.value(self.scale).as_slice();
        Ok((0..STUB_IMAGE_DIM).map(|k| (raw[k] - c[k]) * s[k]).collect())
    }
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Hashed bag-of-words with a frozen bucket embedding table.
///
/// Each token row is the table row of its hash bucket; the CLS row is the
/// L2-normalized bucket histogram of the kept tokens times the table.
#[derive(Clone, Debug, PartialEq)]
pub struct StubTextEncoder {
    pub table: ParamId,
    pub buckets: usize,
}

impl StubTextEncoder {
    pub fn new(store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = stream(seed, tags::INIT, 0x7e47);
        let table = normal_matrix(&mut rng, STUB_TEXT_BUCKETS, STUB_TEXT_BUCKETS).scale(0.5);
        Self { table: store.add("encoder.text_stub.table", Group::Frozen, table), buckets: STUB_TEXT_BUCKETS }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (Fnv::hash(token.as_bytes()) % self.buckets as u64) as usize
    }
}

impl TextEncoder for StubTextEncoder {
    fn name(&self) -> &str {
        "text_stub"
    }

    fn native_dim(&self) -> usize {
        self.buckets
    }

    fn encode_native(&self, store: &ParamStore, text: &str, max_tokens: usize) -> Result<Matrix> {
        if max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be positive".into()));
        }
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EncoderFailure("text has no tokens".into()));
        }
        tokens.truncate(max_tokens - 1);
        let table = store.value(self.table);
        let buckets: Vec<usize> = tokens.iter().map(|t| self.bucket(t)).collect();
        let mut hist = Matrix::zeros(1, self.buckets);
        for &b in &buckets {
            hist[(0, b)] += 1.0;
        }
        let norm = math::sqrt(hist.as_slice().iter().map(|x| x * x).sum());
        let cls = hist.scale(1.0 / norm.max(1.0)).matmul(table);
        let rows = table.select_rows(&buckets);
        Ok(Matrix::vstack(&[&cls, &rows]))
    }
}

/// Frozen encoder plus its trainable `native_dim → d` projection.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderAdapter {
    pub name: String,
    pub native_dim: usize,
    /// Pretrained layers never receive updates.
    pub frozen: bool,
    pub projection: Linear,
}

impl EncoderAdapter {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        native_dim: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let projection = Linear::new(store, &format!("{name}.projection"), group, native_dim, d, rng);
        Self { name: name.into(), native_dim, frozen: true, projection }
    }

    pub fn project(&self, g: &mut Graph, store: &ParamStore, native: Var) -> Result<Var> {
        check_dim("projection input", self.native_dim, g.shape(native).1)?;
        Ok(self.projection.forward(g, store, native))
    }

    pub fn project_plain(&self, store: &ParamStore, native: &Matrix) -> Result<Matrix> {
        check_dim("projection input", self.native_dim, native.cols())?;
        Ok(self.projection.apply(store, native))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEmbeddingMatrix {
    pub values: Matrix,
    pub slide_id: String,
    pub patch_refs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEmbeddingMatrix {
    pub values: Matrix,
    pub cls_index: usize,
}

pub fn encode_patches(
    encoder: &dyn PatchEncoder,
    adapter: &EncoderAdapter,
    store: &ParamStore,
    slide_id: &str,
    tiles: &[(String, TileImage)],
) -> Result<PatchEmbeddingMatrix> {
    let images: Vec<TileImage> = tiles.iter().map(|(_, t)| t.clone()).collect();
    let native = encoder.encode_native(store, &images)?;
    let values = adapter.project_plain(store, &native)?;
    if !values.is_finite() {
        return Err(Error::EncoderFailure("non-finite patch embedding".into()));
    }
    Ok(PatchEmbeddingMatrix {
        values,
        slide_id: slide_id.into(),
        patch_refs: tiles.iter().map(|(r, _)| r.clone()).collect(),
    })
}

pub fn encode_text(
    encoder: &dyn TextEncoder,
    adapter: &EncoderAdapter,
    store: &ParamStore,
    text: &str,
    max_tokens: usize,
) -> Result<TextEmbeddingMatrix> {
    let native = encoder.encode_native(store, text, max_tokens)?;
    let values = adapter.project_plain(store, &native)?;
    if !values.is_finite() {
        return Err(Error::EncoderFailure("non-finite text embedding".into()));
    }
    Ok(TextEmbeddingMatrix { values, cls_index: 0 })
}

/// `n` tile indices out of `available`: distinct when `available ≥ n`,
/// otherwise drawn with replacement.
pub fn sample_patches<R: Rng + ?Sized>(available: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if available == 0 {
        return Err(Error::NoTiles);
    }
    if available >= n {
        Ok(rand::seq::index::sample(rng, available, n).into_vec())
    } else {
        Ok((0..n).map(|_| rng.random_range(0..available)).collect())
    }
}

/// Trainable projections owned by one fusion network.
#[derive(Clone, Debug, PartialEq)]
pub struct SideProjections {
    pub image: EncoderAdapter,
    pub text: EncoderAdapter,
}

impl SideProjections {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        image_native: usize,
        text_native: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            image: EncoderAdapter::new(store, &format!("{name}.image"), group, image_native, d, rng),
            text: EncoderAdapter::new(store, &format!("{name}.text"), group, text_native, d, rng),
        }
    }
}
