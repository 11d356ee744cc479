//! Small classifiers used by the detectability and utility metrics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Graph};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::nn::Linear;
use crate::params::{Adam, AdamConfig, Group, ParamStore};
use crate::rng::{stream, tags, Rng64};
use crate::tensor::{gemm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LogisticRegression,
    MlpClassifier,
    RandomForest,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::LogisticRegression => "logistic_regression",
            ClassifierKind::MlpClassifier => "mlp_classifier",
            ClassifierKind::RandomForest => "random_forest",
        }
    }

    /// Short tag used in metric names.
    pub fn short(self) -> &'static str {
        match self {
            ClassifierKind::LogisticRegression => "lr",
            ClassifierKind::MlpClassifier => "mlp",
            ClassifierKind::RandomForest => "rf",
        }
    }

    fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            ClassifierKind::LogisticRegression => &["c", "max_iter"],
            ClassifierKind::MlpClassifier => &["hidden", "max_iter", "learning_rate", "alpha", "batch_size"],
            ClassifierKind::RandomForest => &["n_trees", "max_depth", "min_samples_split"],
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ClassifierKind::LogisticRegression, ClassifierKind::MlpClassifier, ClassifierKind::RandomForest]
            .into_iter()
            .find(|k| k.as_str() == s || k.short() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Classifier kind plus numeric hyperparameter overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind) -> Self {
        Self { kind, params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.params {
            if !self.kind.allowed_keys().contains(&k.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown {} hyperparameter `{k}`", self.kind)));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidArgument(format!("hyperparameter `{k}` must be a non-negative number")));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    /// Fits the classifier on `(x, y)` with labels in `0..n_classes`.
    pub fn fit(&self, x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<Classifier> {
        self.validate()?;
        check_dim("label count", x.rows(), y.len())?;
        if x.rows() == 0 {
            return Err(Error::TooFewSamples { got: 0, min: 1 });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {n_classes} classes")));
        }
        Ok(match self.kind {
            ClassifierKind::LogisticRegression => Classifier::Logistic(LogisticRegression::fit(
                x,
                y,
                n_classes,
                self.get("c", 1.0),
                self.get("max_iter", 1000.0) as usize,
            )),
            ClassifierKind::MlpClassifier => Classifier::Mlp(MlpClassifier::fit(
                x,
                y,
                n_classes,
                &MlpParams {
                    hidden: self.get("hidden", 128.0) as usize,
                    max_iter: self.get("max_iter", 200.0) as usize,
                    learning_rate: self.get("learning_rate", 1e-3),
                    alpha: self.get("alpha", 1e-4),
                    batch_size: self.get("batch_size", 200.0) as usize,
                },
                seed,
            )),
            ClassifierKind::RandomForest => Classifier::Forest(RandomForest::fit(
                x,
                y,
                n_classes,
                self.get("n_trees", 200.0) as usize,
                self.get("max_depth", 0.0) as usize,
                self.get("min_samples_split", 2.0).max(2.0) as usize,
                seed,
            )),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Logistic(LogisticRegression),
    Mlp(MlpClassifier),
    Forest(RandomForest),
}

impl Classifier {
    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        match self {
            Classifier::Logistic(m) => m.predict_proba(x),
            Classifier::Mlp(m) => m.predict_proba(x),
            Classifier::Forest(m) => m.predict_proba(x),
        }
    }

    /// Most probable class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let p = self.predict_proba(x);
        (0..p.rows()).map(|i| argmax(p.row(i))).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Multinomial logistic regression, objective `½‖W‖² + C Σ_i CE_i`
/// (intercepts unpenalized), minimized with L-BFGS.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    /// `p × k`.
    pub weights: Matrix,
    pub intercept: Vec<f64>,
    pub iterations: usize,
}

impl LogisticRegression {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, c: f64, max_iter: usize) -> Self {
        let (n, p) = x.shape();
        let k = n_classes.max(1);
        let mut onehot = Matrix::zeros(n, k);
        for (i, &c) in y.iter().enumerate() {
            onehot[(i, c)] = 1.0;
        }
        let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
            let w = Matrix::from_vec(p, k, theta[..p * k].to_vec());
            let b = &theta[p * k..];
            let mut logits = gemm(x, false, &w, false);
            for i in 0..n {
                for j in 0..k {
                    logits[(i, j)] += b[j];
                }
            }
            let mut loss = 0.0;
            for i in 0..n {
                let row = logits.row(i);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + math::ln(row.iter().map(|&z| math::exp(z - m)).sum::<f64>());
                loss += lse - row[y[i]];
            }
            let prob = softmax_rows(&logits);
            let resid = prob.zip_map(&onehot, |a, b| a - b);
            let gw = gemm(x, true, &resid, false);
            let mut grad = Vec::with_capacity(theta.len());
            let mut f = c * loss;
            for (&gv, &wv) in gw.as_slice().iter().zip(w.as_slice()) {
                grad.push(c * gv + wv);
                f += 0.5 * wv * wv;
            }
            for j in 0..k {
                grad.push(c * (0..n).map(|i| resid[(i, j)]).sum::<f64>());
            }
            (f, grad)
        };
        let (theta, iterations) = lbfgs(vec![0.0; p * k + k], objective, max_iter, 1e-6);
        Self { weights: Matrix::from_vec(p, k, theta[..p * k].to_vec()), intercept: theta[p * k..].to_vec(), iterations }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let mut logits = gemm(x, false, &self.weights, false);
        for i in 0..logits.rows() {
            for (j, b) in self.intercept.iter().enumerate() {
                logits[(i, j)] += b;
            }
        }
        softmax_rows(&logits)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with a backtracking Armijo line search.
/// Stops when the gradient's max-norm drops below `tol`. Returns the iterate and iteration count.
pub fn lbfgs(mut x: Vec<f64>, mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>), max_iter: usize, tol: f64) -> (Vec<f64>, usize) {
    const MEMORY: usize = 10;
    let (mut fx, mut gx) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iter = 0;
    while iter < max_iter {
        if gx.iter().fold(0.0f64, |m, g| m.max(g.abs())) < tol {
            break;
        }
        // two-loop recursion
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = math::sqrt(dot(&gx, &gx));
            q.iter_mut().for_each(|v| *v /= gn.max(1.0));
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&gx, &dir);
        if slope >= 0.0 {
            dir = gx.iter().map(|g| -g).collect();
            slope = -dot(&gx, &gx);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        iter += 1;
        let Some((xn, fnew, gnew)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let converged = (fx - fnew).abs() <= 1e-12 * fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        gx = gnew;
        if converged {
            break;
        }
    }
    (x, iter)
}

pub struct MlpParams {
    pub hidden: usize,
    pub max_iter: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub batch_size: usize,
}

/// One-hidden-layer rectifier network with a softmax output, trained with
/// Adam on mini-batches; stops after ten epochs without a `1e-4` loss improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    store: ParamStore,
    hidden: Linear,
    output: Linear,
}

impl MlpClassifier {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, params: &MlpParams, seed: u64) -> Self {
        let (n, p) = x.shape();
        let mut rng = stream(seed, tags::CLASSIFIER, 1);
        let mut store = ParamStore::new();
        let hidden = Linear::new(&mut store, "hidden", Group::Generator, p, params.hidden.max(1), &mut rng);
        let output = Linear::new(&mut store, "output", Group::Generator, params.hidden.max(1), n_classes.max(1), &mut rng);
        let mut opt = Adam::new(AdamConfig { lr: params.learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, Group::Generator);
        let batch = params.batch_size.clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        let mut stale = 0;
        for _ in 0..params.max_iter {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                let mut g = Graph::new();
                let xb = g.constant(x.select_rows(chunk));
                let h = hidden.forward(&mut g, &store, xb);
                let h = g.relu(h);
                let logits = output.forward(&mut g, &store, h);
                let prob = g.softmax_rows(logits);
                let mut pick = Matrix::zeros(chunk.len(), n_classes.max(1));
                for (r, &i) in chunk.iter().enumerate() {
                    pick[(r, y[i])] = 1.0;
                }
                // cross-entropy through the picked probabilities
                let picked = g.mul_const(prob, pick);
                let pc = g.sum_cols(picked);
                let clamp = g.add_scalar(pc, 1e-12);
                let logp = g.ln(clamp);
                let ce = g.sum(logp);
                let ce = g.scale(ce, -1.0 / chunk.len() as f64);
                let w1 = g.param(&store, hidden.weight);
                let w2 = g.param(&store, output.weight);
                let s1 = g.square(w1);
                let s2 = g.square(w2);
                let r1 = g.sum(s1);
                let r2 = g.sum(s2);
                let reg = g.add(r1, r2);
                let reg = g.scale(reg, 0.5 * params.alpha / chunk.len() as f64);
                let loss = g.add(ce, reg);
                epoch_loss += g.value(loss)[(0, 0)] * chunk.len() as f64;
                let grads = g.backward(loss);
                opt.step(&mut store, &grads);
            }
            epoch_loss /= n as f64;
            if epoch_loss > best - 1e-4 {
                stale += 1;
                if stale >= 10 {
                    break;
                }
            } else {
                stale = 0;
            }
            best = best.min(epoch_loss);
        }
        Self { store, hidden, output }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let h = self.hidden.apply(&self.store, x).map(|v| v.max(0.0));
        softmax_rows(&self.output.apply(&self.store, &h))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(Vec<f64>),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct TreeParams {
    n_classes: usize,
    max_features: usize,
    max_depth: usize,
    min_samples_split: usize,
}

impl DecisionTree {
    fn fit(x: &Matrix, y: &[usize], rows: Vec<usize>, params: &TreeParams, rng: &mut Rng64) -> Self {
        let mut tree = DecisionTree { nodes: Vec::new() };
        tree.grow(x, y, rows, 0, params, rng);
        tree
    }

    fn distribution(y: &[usize], rows: &[usize], k: usize) -> Vec<f64> {
        let mut counts = vec![0.0; k];
        for &r in rows {
            counts[y[r]] += 1.0;
        }
        let n = rows.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }

    fn grow(&mut self, x: &Matrix, y: &[usize], rows: Vec<usize>, depth: usize, p: &TreeParams, rng: &mut Rng64) -> usize {
        let id = self.nodes.len();
        let dist = Self::distribution(y, &rows, p.n_classes);
        self.nodes.push(Node::Leaf(dist.clone()));
        let pure = dist.contains(&1.0);
        if pure || rows.len() < p.min_samples_split || (p.max_depth > 0 && depth >= p.max_depth) {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, y, &rows, p, rng) else { return id };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, feature)] <= threshold);
        let left = self.grow(x, y, l, depth + 1, p, rng);
        let right = self.grow(x, y, r, depth + 1, p, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(d) => return d,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

fn gini(counts: &[f64], n: f64) -> f64 {
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

/// Best Gini split over a random feature subset; features without a valid
/// split do not count toward the subset, as long as untried features remain.
fn best_split(x: &Matrix, y: &[usize], rows: &[usize], p: &TreeParams, rng: &mut Rng64) -> Option<(usize, f64)> {
    let n = rows.len() as f64;
    let mut features: Vec<usize> = (0..x.cols()).collect();
    features.shuffle(rng);
    let mut total = vec![0.0; p.n_classes];
    for &r in rows {
        total[y[r]] += 1.0;
    }
    let parent = gini(&total, n);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut tried = 0;
    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    for &f in &features {
        if tried >= p.max_features && best.is_some() {
            break;
        }
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (x[(r, f)], y[r])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted[0].0 == sorted[sorted.len() - 1].0 {
            continue;
        }
        tried += 1;
        let mut left = vec![0.0; p.n_classes];
        for i in 0..sorted.len() - 1 {
            left[sorted[i].1] += 1.0;
            if sorted[i].0 == sorted[i + 1].0 {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = n - nl;
            let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let impurity = (nl * gini(&left, nl) + nr * gini(&right, nr)) / n;
            if impurity < parent - 1e-12 && best.is_none_or(|b| impurity < b.0) {
                best = Some((impurity, f, 0.5 * (sorted[i].0 + sorted[i + 1].0)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

/// Bootstrap forest of Gini trees with `√p` candidate features per split;
/// class probabilities are averaged over trees.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

impl RandomForest {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, n_trees: usize, max_depth: usize, min_samples_split: usize, seed: u64) -> Self {
        let n = x.rows();
        let params = TreeParams {
            n_classes,
            max_features: (math::sqrt(x.cols() as f64) as usize).max(1),
            max_depth,
            min_samples_split,
        };
        let trees = (0..n_trees.max(1))
            .map(|t| {
                let mut rng = stream(seed, tags::CLASSIFIER, 100 + t as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                DecisionTree::fit(x, y, rows, &params, &mut rng)
            })
            .collect();
        Self { trees, n_classes }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.n_classes);
        for i in 0..x.rows() {
            for t in &self.trees {
                for (j, &p) in t.leaf(x.row(i)).iter().enumerate() {
                    out[(i, j)] += p;
                }
            }
        }
        out.scale(1.0 / self.trees.len() as f64)
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// F1 of one class; zero when it has no true or predicted members.
pub fn f1_for_class(pred: &[usize], truth: &[usize], class: usize) -> f64 {
    let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == class && t == class).count() as f64;
    let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == class && t != class).count() as f64;
    let fneg = pred.iter().zip(truth).filter(|&(&p, &t)| p != class && t == class).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

/// Unweighted mean of per-class F1 over classes present in either labels or predictions.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let mut classes: Vec<usize> = pred.iter().chain(truth).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    classes.iter().map(|&c| f1_for_class(pred, truth, c)).sum::<f64>() / classes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, seeded};

    fn blobs(n: usize, shift: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut x = normal_matrix(&mut seeded(seed), n, 3);
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for i in 0..n {
            if y[i] == 1 {
                x[(i, 0)] += shift;
            }
        }
        (x, y)
    }

    #[test]
    fn metrics_by_hand() {
        let truth = [0, 0, 1, 1];
        let pred = [0, 1, 1, 1];
        assert_eq!(accuracy(&pred, &truth), 0.75);
        assert!((f1_for_class(&pred, &truth, 1) - 0.8).abs() < 1e-15);
        assert!((macro_f1(&pred, &truth) - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn lbfgs_minimizes_quadratic() {
        let (x, _) = lbfgs(vec![5.0, -3.0], |v| {
            let f = (v[0] - 1.0).powi(2) + 10.0 * (v[1] + 2.0).powi(2);
            (f, vec![2.0 * (v[0] - 1.0), 20.0 * (v[1] + 2.0)])
        }, 100, 1e-10);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn logistic_gradient_vanishes_at_optimum() {
        let (x, y) = blobs(40, 1.0, 2);
        let m = LogisticRegression::fit(&x, &y, 2, 1.0, 1000);
        let prob = m.predict_proba(&x);
        // stationarity: C X^T (P - Y) + W = 0
        for f in 0..3 {
            for k in 0..2 {
                let g: f64 = (0..40).map(|i| x[(i, f)] * (prob[(i, k)] - if y[i] == k { 1.0 } else { 0.0 })).sum::<f64>()
                    + m.weights[(f, k)];
                assert!(g.abs() < 1e-5, "{g}");
            }
        }
    }

    #[test]
    fn all_classifiers_separate_blobs() {
        let (x, y) = blobs(80, 6.0, 3);
        let (xt, yt) = blobs(40, 6.0, 4);
        for kind in [ClassifierKind::LogisticRegression, ClassifierKind::MlpClassifier, ClassifierKind::RandomForest] {
            let spec = ClassifierSpec::new(kind).with(if kind == ClassifierKind::RandomForest { "n_trees" } else { "max_iter" }, 50.0);
            let m = spec.fit(&x, &y, 2, 1).unwrap();
            assert!(accuracy(&m.predict(&xt), &yt) >= 0.95, "{kind}");
        }
    }

    #[test]
    fn unknown_hyperparameter_rejected() {
        let spec = ClassifierSpec::new(ClassifierKind::RandomForest).with("trees", 3.0);
        assert!(matches!(spec.fit(&Matrix::zeros(2, 1), &[0, 1], 2, 0), Err(Error::InvalidArgument(_))));
    }
}
