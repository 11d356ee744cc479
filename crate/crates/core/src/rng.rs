//! Seeded randomness. Every stochastic component draws from a ChaCha stream
//! derived from the run seed plus a purpose tag, so runs are reproducible from
//! `(seed, tag, index)` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Matrix;

pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index into a fresh seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream) ^ index)
}

/// Stream for `(seed, stream, index)`.
pub fn stream(seed: u64, stream: u64, index: u64) -> Rng64 {
    seeded(derive_seed(seed, stream, index))
}

pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Stream tags. Distinct constants keep unrelated consumers of one seed independent.
pub mod tags {
    pub const INIT: u64 = 0x01;
    pub const TRAIN_STEP: u64 = 0x02;
    pub const SAMPLE: u64 = 0x03;
    pub const SPLIT: u64 = 0x04;
    pub const SYNTH: u64 = 0x05;
    pub const CLASSIFIER: u64 = 0x06;
    pub const DETECT: u64 = 0x07;
    pub const BATCH: u64 = 0x08;
    pub const PATCHES: u64 = 0x09;
    pub const VALIDATE: u64 = 0x0a;
}
