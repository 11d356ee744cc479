//! Generative-model metrics: manifold precision and recall, correlation MSE,
//! detectability and utility, with multi-run aggregation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifiers::{accuracy, f1_for_class, macro_f1, ClassifierKind, ClassifierSpec};
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::{derive_seed, stream, tags};
use crate::tensor::Matrix;

/// Default neighbour order for manifold radii.
pub const DEFAULT_T: usize = 10;
const CORRELATION_BLOCK: usize = 512;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Distance from each row to its `t`-th nearest other row.
pub fn manifold_radii(x: &Matrix, t: usize) -> Result<Vec<f64>> {
    let n = x.rows();
    if t == 0 {
        return Err(Error::InvalidArgument("neighbour order must be at least 1".into()));
    }
    if n <= t {
        return Err(Error::TooFewPoints { got: n, t });
    }
    let mut d = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            d.clear();
            d.extend((0..n).filter(|&j| j != i).map(|j| distance(x.row(i), x.row(j))));
            let (_, kth, _) = d.select_nth_unstable_by(t - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

/// 1 when `h` lies inside (or on) any sphere `‖h − x_i‖ ≤ r_i`.
pub fn in_manifold(h: &[f64], x: &Matrix, radii: &[f64]) -> u8 {
    u8::from((0..x.rows()).any(|i| distance(h, x.row(i)) <= radii[i]))
}

/// `(precision, recall)`: the share of generated rows inside the real
/// manifold, and of real rows inside the generated one.
pub fn precision_recall(real: &Matrix, gen: &Matrix, t: usize) -> Result<(f64, f64)> {
    check_dim("generated width", real.cols(), gen.cols())?;
    let r_real = manifold_radii(real, t)?;
    let r_gen = manifold_radii(gen, t)?;
    let inside = |points: &Matrix, centers: &Matrix, radii: &[f64]| {
        (0..points.rows()).map(|i| u32::from(in_manifold(points.row(i), centers, radii))).sum::<u32>() as f64
            / points.rows() as f64
    };
    Ok((inside(gen, real, &r_real), inside(real, gen, &r_gen)))
}

/// Centred, unit-norm gene columns (`None` for constant genes).
fn standardized_columns(x: &Matrix) -> Vec<Option<Vec<f64>>> {
    let n = x.rows() as f64;
    (0..x.cols())
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let norm = math::sqrt(c.iter().map(|v| v * v).sum());
            (norm > 1e-12 * (1.0 + mean.abs()) * math::sqrt(n)).then(|| c.iter().map(|v| v / norm).collect())
        })
        .collect()
}

fn corr_entry(cols: &[Option<Vec<f64>>], i: usize, j: usize) -> f64 {
    if i == j {
        return 1.0;
    }
    match (&cols[i], &cols[j]) {
        (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        _ => 0.0,
    }
}

/// Pearson gene–gene correlation matrix; constant genes get 0 off the diagonal.
pub fn correlation_matrix(x: &Matrix) -> Matrix {
    let cols = standardized_columns(x);
    Matrix::from_fn(x.cols(), x.cols(), |i, j| corr_entry(&cols, i, j))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMse {
    pub value: f64,
    /// At least one gene was constant in either dataset.
    pub constant_genes: bool,
}

/// Mean squared difference of the real and generated correlation matrices
/// over all `g²` entries, optionally restricted to `genes`.
pub fn correlation_mse(real: &Matrix, gen: &Matrix, genes: Option<&[usize]>) -> Result<CorrelationMse> {
    correlation_mse_blocked(real, gen, genes, CORRELATION_BLOCK)
}

/// [`correlation_mse`] evaluated in `block × block` tiles of the correlation matrices.
pub fn correlation_mse_blocked(real: &Matrix, gen: &Matrix, genes: Option<&[usize]>, block: usize) -> Result<CorrelationMse> {
    check_dim("generated width", real.cols(), gen.cols())?;
    for m in [real, gen] {
        if m.rows() < 2 {
            return Err(Error::TooFewSamples { got: m.rows(), min: 2 });
        }
    }
    let (real, gen) = match genes {
        Some(sel) => {
            if let Some(&bad) = sel.iter().find(|&&j| j >= real.cols()) {
                return Err(Error::InvalidArgument(format!("gene index {bad} out of range")));
            }
            (real.select_cols(sel), gen.select_cols(sel))
        }
        None => (real.clone(), gen.clone()),
    };
    let g = real.cols();
    if g == 0 {
        return Err(Error::InvalidArgument("no genes to compare".into()));
    }
    let a = standardized_columns(&real);
    let b = standardized_columns(&gen);
    let constant_genes = a.iter().chain(&b).any(Option::is_none);
    let block = block.max(1);
    let mut total = 0.0;
    for bi in (0..g).step_by(block) {
        for bj in (0..g).step_by(block) {
            let mut tile = 0.0;
            for i in bi..(bi + block).min(g) {
                for j in bj..(bj + block).min(g) {
                    let d = corr_entry(&a, i, j) - corr_entry(&b, i, j);
                    tile += d * d;
                }
            }
            total += tile;
        }
    }
    Ok(CorrelationMse { value: total / (g * g) as f64, constant_genes })
}

/// Indices of the `k` highest-variance genes of `x`, in column order.
pub fn top_variance_genes(x: &Matrix, k: usize) -> Vec<usize> {
    let n = x.rows() as f64;
    let mut var: Vec<(usize, f64)> = (0..x.cols())
        .map(|j| {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            (j, col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
        })
        .collect();
    var.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = var.into_iter().take(k).map(|(j, _)| j).collect();
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub accuracy: f64,
    pub f1: f64,
}

/// Stratified train/test split of row indices by label.
fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream(seed, tags::DETECT, 1);
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rows in classes.values_mut() {
        rows.shuffle(&mut rng);
        let k = math::round(rows.len() as f64 * train_fraction) as usize;
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Real-versus-generated classification on a balanced, 70/30 stratified
/// split. Labels: real 0, generated 1; F1 is for the generated class.
pub fn detectability(real: &Matrix, gen: &Matrix, spec: &ClassifierSpec, seed: u64) -> Result<ClassifierScore> {
    const MIN: usize = 20;
    check_dim("generated width", real.cols(), gen.cols())?;
    for m in [real, gen] {
        if m.rows() < MIN {
            return Err(Error::TooFewSamples { got: m.rows(), min: MIN });
        }
    }
    let n = real.rows().min(gen.rows());
    let mut rng = stream(seed, tags::DETECT, 0);
    let mut pick = |m: &Matrix| -> Matrix {
        if m.rows() == n {
            return m.clone();
        }
        let mut idx = rand::seq::index::sample(&mut rng, m.rows(), n).into_vec();
        idx.sort_unstable();
        m.select_rows(&idx)
    };
    let x = Matrix::vstack(&[&pick(real), &pick(gen)]);
    let y: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
    let (train, test) = stratified_split(&y, 0.7, seed);
    let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = test.iter().map(|&i| y[i]).collect();
    let model = spec.fit(&x.select_rows(&train), &ytr, 2, derive_seed(seed, tags::CLASSIFIER, 0))?;
    let pred = model.predict(&x.select_rows(&test));
    Ok(ClassifierScore { accuracy: accuracy(&pred, &yte), f1: f1_for_class(&pred, &yte, 1) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityScore {
    pub accuracy: f64,
    /// Macro average over classes.
    pub f1: f64,
    /// Test classes with no generated training sample; their rows count as errors.
    pub absent_classes: Vec<usize>,
}

/// Train on labelled generated profiles, test on labelled real profiles.
pub fn utility(
    gen: &Matrix,
    gen_labels: &[usize],
    real: &Matrix,
    real_labels: &[usize],
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<UtilityScore> {
    check_dim("generated width", real.cols(), gen.cols())?;
    if gen_labels.len() != gen.rows() {
        return Err(Error::MissingLabels(format!("{} labels for {} generated profiles", gen_labels.len(), gen.rows())));
    }
    if real_labels.len() != real.rows() {
        return Err(Error::MissingLabels(format!("{} labels for {} real profiles", real_labels.len(), real.rows())));
    }
    if gen.rows() == 0 || real.rows() == 0 {
        return Err(Error::TooFewSamples { got: 0, min: 1 });
    }
    let n_classes = gen_labels.iter().chain(real_labels).max().map_or(0, |m| m + 1);
    let mut absent: Vec<usize> = real_labels.iter().copied().filter(|c| !gen_labels.contains(c)).collect();
    absent.sort_unstable();
    absent.dedup();
    let model = spec.fit(gen, gen_labels, n_classes, derive_seed(seed, tags::CLASSIFIER, 1))?;
    let pred = model.predict(real);
    Ok(UtilityScore { accuracy: accuracy(&pred, real_labels), f1: macro_f1(&pred, real_labels), absent_classes: absent })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricStatus {
    Ok,
    Failed(String),
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub per_run: Vec<f64>,
    #[serde(deserialize_with = "nan_for_null")]
    pub mean: f64,
    /// Population standard deviation of `per_run`.
    #[serde(deserialize_with = "nan_for_null")]
    pub std: f64,
    pub status: MetricStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// JSON has no NaN; undefined summaries are written as `null` and read back as NaN.
fn nan_for_null<'de, D: serde::Deserializer<'de>>(d: D) -> core::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl MetricResult {
    pub fn from_runs(per_run: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_run);
        Self { per_run, mean, std, status: MetricStatus::Ok, notes: Vec::new() }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        Self { per_run: Vec::new(), mean: f64::NAN, std: f64::NAN, status: MetricStatus::Failed(reason.into()), notes: Vec::new() }
    }

    pub fn skipped(reason: impl Into<String>) -> Self {
        Self { per_run: Vec::new(), mean: f64::NAN, std: f64::NAN, status: MetricStatus::Skipped(reason.into()), notes: Vec::new() }
    }

    pub fn is_ok(&self) -> bool {
        self.status == MetricStatus::Ok
    }
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub t: usize,
    pub n_runs: usize,
    pub detectability: Vec<ClassifierSpec>,
    pub utility: Vec<ClassifierSpec>,
    /// Restrict correlation MSE to this many highest-variance real genes.
    pub correlation_top_k: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            t: DEFAULT_T,
            n_runs: 10,
            detectability: vec![ClassifierSpec::new(ClassifierKind::LogisticRegression), ClassifierSpec::new(ClassifierKind::MlpClassifier)],
            utility: vec![ClassifierSpec::new(ClassifierKind::RandomForest), ClassifierSpec::new(ClassifierKind::LogisticRegression)],
            correlation_top_k: None,
            seed: 0,
        }
    }
}

/// Labelled utility task: real test labels plus the labels carried by the
/// conditioning of each generated row.
pub struct UtilityTask<'a> {
    pub name: &'a str,
    pub real_labels: &'a [usize],
    pub gen_labels: &'a [usize],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: BTreeMap<String, MetricResult>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub model_checkpoint_ref: Option<String>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.get(name)
    }
}

/// Evaluates every metric on every generated run; a failing metric is
/// recorded as failed without affecting the others.
/// `tasks = None` marks an unconditional model whose utility is not applicable.
pub fn evaluate_runs(real: &Matrix, runs: &[Matrix], tasks: Option<&[UtilityTask<'_>]>, config: &EvalConfig) -> BTreeMap<String, MetricResult> {
    let mut per: BTreeMap<String, Result<Vec<f64>>> = BTreeMap::new();
    let mut notes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let push = |per: &mut BTreeMap<String, Result<Vec<f64>>>, name: String, v: Result<f64>| {
        let slot = per.entry(name).or_insert_with(|| Ok(Vec::new()));
        match (slot.as_mut(), v) {
            (Ok(list), Ok(x)) => list.push(x),
            (Ok(_), Err(e)) => *slot = Err(e),
            (Err(_), _) => {}
        }
    };
    let genes = config.correlation_top_k.map(|k| top_variance_genes(real, k));
    for (r, gen) in runs.iter().enumerate() {
        let run_seed = derive_seed(config.seed, tags::CLASSIFIER, r as u64);
        match precision_recall(real, gen, config.t) {
            Ok((p, rc)) => {
                push(&mut per, "precision".into(), Ok(p));
                push(&mut per, "recall".into(), Ok(rc));
            }
            Err(e) => {
                push(&mut per, "precision".into(), Err(e.clone()));
                push(&mut per, "recall".into(), Err(e));
            }
        }
        match correlation_mse(real, gen, genes.as_deref()) {
            Ok(c) => {
                if c.constant_genes {
                    let n = notes.entry("correlation_mse".into()).or_default();
                    let msg = "constant genes assigned zero correlation".to_string();
                    if !n.contains(&msg) {
                        n.push(msg);
                    }
                }
                push(&mut per, "correlation_mse".into(), Ok(c.value));
            }
            Err(e) => push(&mut per, "correlation_mse".into(), Err(e)),
        }
        for spec in &config.detectability {
            let base = format!("detectability_{}", spec.kind.short());
            let s = detectability(real, gen, spec, run_seed);
            push(&mut per, format!("{base}_accuracy"), s.as_ref().map(|s| s.accuracy).map_err(Clone::clone));
            push(&mut per, format!("{base}_f1"), s.map(|s| s.f1));
        }
        for task in tasks.unwrap_or(&[]) {
            for spec in &config.utility {
                let base = format!("utility_{}_{}", task.name, spec.kind.short());
                let s = utility(gen, task.gen_labels, real, task.real_labels, spec, run_seed);
                if let Ok(u) = &s {
                    if !u.absent_classes.is_empty() {
                        let n = notes.entry(format!("{base}_accuracy")).or_default();
                        let msg = format!("classes absent from generated training data: {:?}", u.absent_classes);
                        if !n.contains(&msg) {
                            n.push(msg);
                        }
                    }
                }
                push(&mut per, format!("{base}_accuracy"), s.as_ref().map(|s| s.accuracy).map_err(Clone::clone));
                push(&mut per, format!("{base}_f1"), s.map(|s| s.f1));
            }
        }
    }
    let mut out: BTreeMap<String, MetricResult> = per
        .into_iter()
        .map(|(name, r)| {
            let mut m = match r {
                Ok(v) => MetricResult::from_runs(v),
                Err(e) => MetricResult::failed(e.to_string()),
            };
            m.notes = notes.remove(&name).unwrap_or_default();
            (name, m)
        })
        .collect();
    if tasks.is_none() {
        for task in ["disease_type", "primary_site"] {
            for spec in &config.utility {
                for fig in ["accuracy", "f1"] {
                    out.insert(
                        format!("utility_{task}_{}_{fig}", spec.kind.short()),
                        MetricResult::skipped("unconditional model has no labels"),
                    );
                }
            }
        }
    }
    out
}
