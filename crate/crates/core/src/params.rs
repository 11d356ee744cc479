//! Named parameter storage and the Adam optimizer.
//!
//! Stored values are kept on the `f32` grid: initialization and every
//! optimizer update round parameters and moment estimates to the nearest
//! `f32`, so the 32-bit checkpoint format restores training state exactly.
//! Arithmetic itself runs in `f64`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::math;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Which optimizer owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Generator MLP, generator-side fusion network and its projections.
    Generator,
    /// Critic MLP, critic-side fusion network and its projections.
    Discriminator,
    /// Pretrained encoder layers; never updated.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub value: Matrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. The value is rounded onto the `f32` grid.
    pub fn add(&mut self, name: impl Into<String>, group: Group, mut value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        value.round_to_f32();
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, group: Group, rows: usize, cols: usize) -> ParamId {
        self.add(name, group, Matrix::zeros(rows, cols))
    }

    /// Uniform in `±1/sqrt(fan_in)`, the usual default for dense layers.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: Group,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        let value = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        self.add(name, group, value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    /// Direct write access; the caller is responsible for the `f32` grid.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, mut value: Matrix) {
        assert_eq!(value.shape(), self.entries[id.0].value.shape(), "shape mismatch for {}", self.entries[id.0].name);
        value.round_to_f32();
        self.entries[id.0].value = value;
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn count_scalars(&self, group: Option<Group>) -> usize {
        self.entries.iter().filter(|e| group.is_none_or(|g| e.group == g)).map(|e| e.value.len()).sum()
    }

    /// FNV-1a over the bit patterns of every parameter in `group`.
    pub fn fingerprint(&self, group: Group) -> u64 {
        let mut h = Fnv::default();
        for e in self.entries.iter().filter(|e| e.group == group) {
            h.write(e.name.as_bytes());
            for x in e.value.as_slice() {
                h.write(&x.to_bits().to_le_bytes());
            }
        }
        h.0
    }
}

/// 64-bit FNV-1a hasher.
pub struct Fnv(pub u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn hash(bytes: &[u8]) -> u64 {
        let mut h = Fnv::default();
        h.write(bytes);
        h.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.0, beta2: 0.9, eps: 1e-8 }
    }
}

/// Adam restricted to one parameter [`Group`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub group: Group,
    pub step: u64,
    pub first_moment: BTreeMap<ParamId, Matrix>,
    pub second_moment: BTreeMap<ParamId, Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, group: Group) -> Self {
        assert!(group != Group::Frozen, "frozen parameters have no optimizer");
        Self { config, group, step: 0, first_moment: BTreeMap::new(), second_moment: BTreeMap::new() }
    }

    /// Applies one update to every parameter of this optimizer's group that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - math::powi(beta1, self.step as i32);
        let bc2 = 1.0 - math::powi(beta2, self.step as i32);
        for id in grads.param_ids() {
            if store.entry(id).group != self.group {
                continue;
            }
            let Some(g) = grads.param(id) else { continue };
            let (rows, cols) = g.shape();
            let m = self.first_moment.entry(id).or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.second_moment.entry(id).or_insert_with(|| Matrix::zeros(rows, cols));
            let p = store.value_mut(id);
            for k in 0..g.len() {
                let gk = g.as_slice()[k];
                let mk = (beta1 * m.as_slice()[k] + (1.0 - beta1) * gk) as f32 as f64;
                let vk = (beta2 * v.as_slice()[k] + (1.0 - beta2) * gk * gk) as f32 as f64;
                m.as_mut_slice()[k] = mk;
                v.as_mut_slice()[k] = vk;
                let update = lr * (mk / bc1) / (math::sqrt(vk / bc2) + eps);
                let pk = &mut p.as_mut_slice()[k];
                *pk = (*pk - update) as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn adam_moves_against_gradient_and_respects_group() {
        let mut store = ParamStore::new();
        let a = store.add("a", Group::Generator, Matrix::filled(1, 2, 1.0));
        let b = store.add("b", Group::Discriminator, Matrix::filled(1, 2, 1.0));
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let bv = g.param(&store, b);
        let s = g.add(av, bv);
        let l = g.sum(s);
        let grads = g.backward(l);
        let before = store.fingerprint(Group::Discriminator);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, Group::Generator);
        opt.step(&mut store, &grads);
        assert!(store.value(a).as_slice().iter().all(|&x| x < 1.0));
        assert_eq!(store.fingerprint(Group::Discriminator), before);
    }

    #[test]
    fn values_stay_on_f32_grid() {
        let mut store = ParamStore::new();
        let a = store.add("a", Group::Generator, Matrix::filled(1, 1, 0.1));
        assert_eq!(store.value(a)[(0, 0)], 0.1f32 as f64);
    }
}
