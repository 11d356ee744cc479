//! Layers built on the autodiff tape.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{softmax_rows, Graph, Var};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::params::{Group, ParamId, ParamStore};
use crate::rng::Rng64;
use crate::tensor::{gemm, Matrix};

/// Forward-pass mode. Training mode carries the dropout stream.
pub enum Mode {
    Eval,
    Train(Rng64),
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    /// Inverted dropout: zeroes entries with probability `p`, rescales survivors.
    pub fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Var {
        match self {
            Mode::Train(rng) if p > 0.0 => {
                let (r, c) = g.shape(x);
                let keep = 1.0 / (1.0 - p);
                let mask = Matrix::from_fn(r, c, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
                g.mul_const(x, mask)
            }
            _ => x,
        }
    }
}

/// Dense layer `y = x W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.uniform(format!("{name}.weight"), group, fan_in, fan_out, fan_in, rng);
        let bias = store.uniform(format!("{name}.bias"), group, 1, fan_out, fan_in, rng);
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, group: Group, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.zeros(format!("{name}.weight"), group, fan_in, fan_out);
        let bias = store.zeros(format!("{name}.bias"), group, 1, fan_out);
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// Forward pass on plain matrices.
    pub fn apply(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let mut y = gemm(x, false, store.value(self.weight), false);
        let b = store.value(self.bias);
        for i in 0..y.rows() {
            for (v, bb) in y.row_mut(i).iter_mut().zip(b.as_slice()) {
                *v += bb;
            }
        }
        y
    }
}

/// Row-wise layer normalization with learnable gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), group, Matrix::filled(1, d, 1.0));
        let shift = store.zeros(format!("{name}.shift"), group, 1, d);
        Self { gain, shift, eps: 1e-5 }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x, self.eps);
        let gain = g.param(store, self.gain);
        let shift = g.param(store, self.shift);
        let y = g.mul_row(n, gain);
        g.add_row(y, shift)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub d: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::HeadsDontDivide { d, heads });
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), group, d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), group, d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), group, d, d, rng),
            output: Linear::new(store, &format!("{name}.output"), group, d, d, rng),
            heads,
            d,
        })
    }

    /// Sets all four projections to the identity with zero bias.
    pub fn set_identity(&self, store: &mut ParamStore) {
        for lin in [&self.query, &self.key, &self.value, &self.output] {
            store.set(lin.weight, Matrix::identity(self.d));
            store.set(lin.bias, Matrix::zeros(1, self.d));
        }
    }

    /// `q: q×d` attends over `kv: k×d`; returns `q×d`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, q: Var, kv: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
        check_dim("attention query width", self.d, g.shape(q).1)?;
        check_dim("attention key width", self.d, g.shape(kv).1)?;
        let qp = self.query.forward(g, store, q);
        let kp = self.key.forward(g, store, kv);
        let vp = self.value.forward(g, store, kv);
        let dh = self.d / self.heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (qp, kp, vp)
            } else {
                (g.slice_cols(qp, h * dh, dh), g.slice_cols(kp, h * dh, dh), g.slice_cols(vp, h * dh, dh))
            };
            let scores = g.matmul_t(qh, false, kh, true);
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores);
            let weights = mode.dropout(g, weights, dropout);
            outs.push(g.matmul(weights, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        Ok(self.output.forward(g, store, joined))
    }

    /// Per-head attention weight matrices (`q×k` each) for plain inputs.
    pub fn attention_weights(&self, store: &ParamStore, q: &Matrix, kv: &Matrix) -> Vec<Matrix> {
        let qp = self.query.apply(store, q);
        let kp = self.key.apply(store, kv);
        let dh = self.d / self.heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        (0..self.heads)
            .map(|h| {
                let cols: Vec<usize> = (h * dh..(h + 1) * dh).collect();
                let s = gemm(&qp.select_cols(&cols), false, &kp.select_cols(&cols), true).scale(scale);
                softmax_rows(&s)
            })
            .collect()
    }
}

/// Pre-normalization transformer encoder block without positional encodings.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl TransformerLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        d: usize,
        heads: usize,
        ffn_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), group, d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), group, d, heads, rng)?,
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), group, d),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), group, d, ffn_width, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), group, ffn_width, d, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, dropout: f64, mode: &mut Mode) -> Result<Var> {
        let h = self.norm_attn.forward(g, store, x);
        let a = self.attn.forward(g, store, h, h, dropout, mode)?;
        let a = mode.dropout(g, a, dropout);
        let x = g.add(x, a);
        let h = self.norm_ffn.forward(g, store, x);
        let h = self.ffn_in.forward(g, store, h);
        let h = g.relu(h);
        let h = mode.dropout(g, h, dropout);
        let h = self.ffn_out.forward(g, store, h);
        Ok(g.add(x, h))
    }

    /// Zeroes attention and feed-forward weights so the block reduces to its residual path.
    pub fn zero_branches(&self, store: &mut ParamStore) {
        let d = self.attn.d;
        for lin in [&self.attn.query, &self.attn.key, &self.attn.value, &self.attn.output] {
            store.set(lin.weight, Matrix::zeros(d, d));
            store.set(lin.bias, Matrix::zeros(1, d));
        }
        for lin in [&self.ffn_in, &self.ffn_out] {
            let (r, c) = store.value(lin.weight).shape();
            store.set(lin.weight, Matrix::zeros(r, c));
            store.set(lin.bias, Matrix::zeros(1, c));
        }
    }
}

/// Fully connected network with a shared hidden activation and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Negative-side slope of the hidden activation: 0 is a rectifier, 1 is linear.
    pub slope: f64,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        widths: &[usize],
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], rng))
            .collect();
        Self { layers, slope }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i < last {
                h = g.leaky_relu(h, self.slope);
            }
        }
        h
    }

    /// Forward pass that also returns the hidden pre-activations.
    pub fn forward_with_preactivations(&self, g: &mut Graph, store: &ParamStore, x: Var) -> (Var, Vec<Var>) {
        let mut h = x;
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i < last {
                pre.push(h);
                h = g.leaky_relu(h, self.slope);
            }
        }
        (h, pre)
    }

    pub fn apply(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(store, &h);
            if i < last {
                let s = self.slope;
                h = h.map(|v| if v > 0.0 { v } else { s * v });
            }
        }
        h
    }

    pub fn names(&self, store: &ParamStore) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| [store.entry(l.weight).name.clone(), store.entry(l.bias).name.clone()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, seeded};
    use alloc::vec;

    #[test]
    fn mha_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let err = MultiHeadAttention::new(&mut store, "a", Group::Generator, 6, 4, &mut seeded(0)).unwrap_err();
        assert_eq!(err, Error::HeadsDontDivide { d: 6, heads: 4 });
    }

    #[test]
    fn attention_weight_rows_are_distributions() {
        let mut store = ParamStore::new();
        let mut rng = seeded(4);
        let mha = MultiHeadAttention::new(&mut store, "a", Group::Generator, 8, 2, &mut rng).unwrap();
        let q = normal_matrix(&mut rng, 3, 8);
        let kv = normal_matrix(&mut rng, 5, 8);
        for w in mha.attention_weights(&store, &q, &kv) {
            assert_eq!(w.shape(), (3, 5));
            for i in 0..3 {
                assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(w.row(i).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn mlp_graph_and_plain_forward_agree() {
        let mut store = ParamStore::new();
        let mut rng = seeded(5);
        let mlp = Mlp::new(&mut store, "m", Group::Generator, &[4, 7, 3], 0.2, &mut rng);
        let x = normal_matrix(&mut rng, 5, 4);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &store, xv);
        assert!(g.value(y).max_abs_diff(&mlp.apply(&store, &x)) < 1e-12);
        assert_eq!(mlp.names(&store).len(), 4);
        assert_eq!(vec![mlp.input_width(), mlp.output_width()], vec![4, 3]);
    }
}
