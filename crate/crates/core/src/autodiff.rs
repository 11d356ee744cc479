//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation eagerly: each call computes the value
//! and appends a node. [`Graph::backward`] walks the tape in reverse and
//! accumulates adjoints for every node that depends on a parameter.
//!
//! Parameters enter the tape through [`Graph::param`], which copies the
//! current value out of a [`ParamStore`] once per graph. Gradients are
//! collected per [`ParamId`] so optimizers never need to see tape indices.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Matrix};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Matrix),
    LeakyRelu(Var, f64),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Ln(Var),
    SoftmaxRows(Var),
    LayerNormRows { a: Var, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Transpose(Var),
    Sum(Var),
    MeanRows(Var),
    SumCols(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: BTreeMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter; `None` if the parameter was not on the tape
    /// or did not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id).and_then(|v| self.get(*v))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not tied to a parameter store.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Places a parameter on the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = gemm(self.value(a), ta, self.value(b), tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(row), |x, r| x + r);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of `a` element-wise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(row), |x, r| x * r);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::MulRow(a, row), rg)
    }

    /// Multiplies row `i` of `a` by the scalar `col[i]` of an `n × 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), (av.rows(), 1), "mul_col expects an n x 1 column");
        let value = Matrix::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] * cv[(i, 0)]);
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// Element-wise product with a fixed matrix (masks, dropout).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let value = self.value(a).zip_map(&mask, |x, m| x * m);
        let rg = self.rg(a);
        self.push(value, Op::MulConst(a, mask), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::sqrt);
        let rg = self.rg(a);
        self.push(value, Op::Sqrt(a), rg)
    }

    /// Natural logarithm (inputs must be positive).
    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::ln);
        let rg = self.rg(a);
        self.push(value, Op::Ln(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let av = self.value(a);
        let (n, c) = av.shape();
        let mut out = Matrix::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = av.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            for (o, x) in out.row_mut(i).iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(out, Op::LayerNormRows { a, inv_std }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::hstack(&mats);
        let rg = parts.iter().any(|v| self.rg(*v));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::vstack(&mats);
        let rg = parts.iter().any(|v| self.rg(*v));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "column slice out of range");
        let value = Matrix::from_fn(av.rows(), len, |i, j| av[(i, start + j)]);
        let rg = self.rg(a);
        self.push(value, Op::SliceCols { a, start }, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows(), "row slice out of range");
        let c = av.cols();
        let value = Matrix::from_vec(len, c, av.as_slice()[start * c..(start + len) * c].to_vec());
        let rg = self.rg(a);
        self.push(value, Op::SliceRows { a, start }, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Sum of all entries as a `1 × 1` matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means as a `1 × c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).column_means();
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    /// Row sums as an `n × 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Matrix::from_fn(av.rows(), 1, |i, _| av.row(i).iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Reverse sweep from a `1 × 1` loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, params: self.params.clone() }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let da = if *ta { gemm(bv, *tb, g, true) } else { gemm(g, false, bv, !*tb) };
                    acc(*a, da);
                }
                if self.rg(*b) {
                    let db = if *tb { gemm(g, true, av, *ta) } else { gemm(av, !*ta, g, false) };
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.rg(*row) {
                    acc(*row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                if self.rg(*a) {
                    acc(*a, broadcast_row(g, self.value(*row), |x, r| x * r));
                }
                if self.rg(*row) {
                    acc(*row, column_sums(&g.zip_map(self.value(*a), |x, y| x * y)));
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (self.value(*a), self.value(*col));
                if self.rg(*a) {
                    acc(*a, Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * cv[(i, 0)]));
                }
                if self.rg(*col) {
                    let d = Matrix::from_fn(g.rows(), 1, |i, _| {
                        g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum()
                    });
                    acc(*col, d);
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulConst(a, mask) => acc(*a, g.zip_map(mask, |x, m| x * m)),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                acc(*a, g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { s * x }));
            }
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y)),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |x, v| 2.0 * v * x)),
            Op::Sqrt(a) => acc(*a, g.zip_map(&node.value, |x, y| 0.5 * x / y)),
            Op::Ln(a) => acc(*a, g.zip_map(self.value(*a), |x, v| x / v)),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for ((o, gy), yy) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = yy * (gy - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNormRows { a, inv_std } => {
                let y = &node.value;
                let c = y.cols() as f64;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gr = g.row(i);
                    let yr = y.row(i);
                    let mean_g = gr.iter().sum::<f64>() / c;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                    for ((o, gv), yv) in d.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = inv_std[i] * (gv - mean_g - yv * mean_gy);
                    }
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.rg(*p) {
                        acc(*p, Matrix::from_fn(g.rows(), w, |i, j| g[(i, start + j)]));
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for p in parts {
                    let h = self.value(*p).rows();
                    if self.rg(*p) {
                        let slice = g.as_slice()[start * c..(start + h) * c].to_vec();
                        acc(*p, Matrix::from_vec(h, c, slice));
                    }
                    start += h;
                }
            }
            // Slices add straight into the parent's gradient so that many
            // small slices of one large input don't each allocate its shape.
            Op::SliceCols { a, start } => {
                if self.rg(*a) {
                    let (r, c) = self.value(*a).shape();
                    let d = grads[a.0].get_or_insert_with(|| Matrix::zeros(r, c));
                    for i in 0..r {
                        for (o, v) in d.row_mut(i)[*start..*start + g.cols()].iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::SliceRows { a, start } => {
                if self.rg(*a) {
                    let (r, c) = self.value(*a).shape();
                    let d = grads[a.0].get_or_insert_with(|| Matrix::zeros(r, c));
                    for (o, v) in d.as_mut_slice()[start * c..(start + g.rows()) * c].iter_mut().zip(g.as_slice()) {
                        *o += v;
                    }
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).shape();
                let inv = 1.0 / r as f64;
                acc(*a, Matrix::from_fn(r, c, |_, j| g[(0, j)] * inv));
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
            }
        }
    }
}

fn broadcast_row(a: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(row.shape(), (1, a.cols()), "row broadcast expects 1 x {}", a.cols());
    let mut out = a.clone();
    let r = row.as_slice();
    for i in 0..a.rows() {
        for (x, rv) in out.row_mut(i).iter_mut().zip(r) {
            *x = f(*x, *rv);
        }
    }
    out
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, x) in out.as_mut_slice().iter_mut().zip(g.row(i)) {
            *o += x;
        }
    }
    out
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = math::exp(*x - max);
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

/// Central finite-difference gradient of a scalar function of one matrix.
///
/// Test support: used as the independent oracle for analytic gradients.
pub fn finite_difference(x: &Matrix, step: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let hi = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let lo = f(&probe);
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (hi - lo) / (2.0 * step);
    }
    out
}

/// Largest relative error `|a - b| / max(|a|, |b|, floor)` between two gradients.
pub fn max_relative_error(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, seeded};
    use alloc::vec;

    /// Builds `loss = f(x)` on a fresh graph and compares d loss / d x to finite differences.
    fn check(x: &Matrix, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let loss = build(&mut g, xv);
        let analytic = g.backward(loss).get(xv).cloned().unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));
        let numeric = finite_difference(x, 1e-6, |p| {
            let mut g = Graph::new();
            let pv = g.variable(p.clone());
            let l = build(&mut g, pv);
            g.value(l)[(0, 0)]
        });
        let err = max_relative_error(&analytic, &numeric, 1e-3);
        assert!(err < 1e-6, "relative error {err}: analytic {analytic:?} numeric {numeric:?}");
    }

    fn weights(seed: u64, r: usize, c: usize) -> Matrix {
        normal_matrix(&mut seeded(seed), r, c)
    }

    #[test]
    fn matmul_all_transpose_modes() {
        let x = weights(1, 3, 4);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let w = if tb { weights(2, 5, 4) } else { weights(2, 4, 5) };
            let x = if ta { x.transpose() } else { x.clone() };
            check(&x, |g, xv| {
                let wv = g.variable(w.clone());
                let y = g.matmul_t(xv, ta, wv, tb);
                let y = g.square(y);
                g.sum(y)
            });
        }
    }

    #[test]
    fn logarithm() {
        let x = weights(9, 3, 2).map(|v| 0.5 + v * v);
        check(&x, |g, xv| {
            let l = g.ln(xv);
            let l = g.square(l);
            g.sum(l)
        });
    }

    #[test]
    fn elementwise_and_broadcast_ops() {
        let x = weights(3, 4, 3);
        let row = weights(4, 1, 3);
        let col = weights(5, 4, 1);
        check(&x, |g, xv| {
            let r = g.constant(row.clone());
            let c = g.constant(col.clone());
            let a = g.add_row(xv, r);
            let b = g.mul_row(a, r);
            let b = g.mul_col(b, c);
            let e = g.exp(xv);
            let s = g.mul(b, e);
            let t = g.leaky_relu(s, 0.2);
            let u = g.square(t);
            let u = g.add_scalar(u, 1.0);
            let v = g.sqrt(u);
            let w = g.sub(v, xv);
            g.mean(w)
        });
    }

    #[test]
    fn broadcast_operands_receive_gradients() {
        let row = weights(6, 1, 3);
        let base = weights(7, 4, 3);
        check(&row, |g, rv| {
            let b = g.constant(base.clone());
            let a = g.mul_row(b, rv);
            let c = g.add_row(a, rv);
            let c = g.square(c);
            g.sum(c)
        });
        let col = weights(8, 4, 1);
        check(&col, |g, cv| {
            let b = g.constant(base.clone());
            let a = g.mul_col(b, cv);
            let a = g.square(a);
            g.sum(a)
        });
    }

    #[test]
    fn softmax_layernorm_and_reductions() {
        let x = weights(9, 3, 5);
        let probe = weights(10, 3, 5);
        check(&x, |g, xv| {
            let p = g.constant(probe.clone());
            let s = g.softmax_rows(xv);
            let l = g.layer_norm_rows(xv, 1e-5);
            let a = g.add(s, l);
            let a = g.mul(a, p);
            let m = g.mean_rows(a);
            let m = g.square(m);
            let r = g.sum_cols(a);
            let r = g.square(r);
            let s1 = g.sum(m);
            let s2 = g.sum(r);
            g.add(s1, s2)
        });
    }

    #[test]
    fn structural_ops() {
        let x = weights(11, 4, 6);
        check(&x, |g, xv| {
            let a = g.slice_cols(xv, 1, 3);
            let b = g.slice_rows(xv, 2, 2);
            let t = g.transpose(b);
            let c = g.concat_rows(&[a, a]);
            let c = g.square(c);
            let d = g.concat_cols(&[t, t]);
            let d = g.exp(d);
            let s1 = g.sum(c);
            let s2 = g.sum(d);
            let s = g.sub(s1, s2);
            g.scale(s, 0.5)
        });
    }

    #[test]
    fn mul_const_masks_gradient() {
        let x = weights(12, 2, 3);
        let mask = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 0.5]]);
        let mut g = Graph::new();
        let xv = g.variable(x);
        let y = g.mul_const(xv, mask.clone());
        let l = g.sum(y);
        let grads = g.backward(l);
        assert_eq!(grads.get(xv).unwrap(), &mask);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = weights(13, 6, 7).scale(30.0);
        let s = softmax_rows(&x);
        for i in 0..s.rows() {
            let total: f64 = s.row(i).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(s.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Matrix::filled(2, 2, 1.0));
        let v = g.variable(Matrix::filled(2, 2, 3.0));
        let p = g.mul(c, v);
        let l = g.sum(p);
        let grads = g.backward(l);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(v).unwrap().as_slice(), &[1.0; 4]);
    }
}
