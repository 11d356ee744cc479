use gemm_core::autodiff::{finite_difference, max_relative_error, Graph};
use gemm_core::fusion::{FusionConfig, FusionNet, FusionVariant};
use gemm_core::gan::{gradient_penalty, LinearCritic};
use gemm_core::metrics::{correlation_mse, precision_recall};
use gemm_core::nn::Mode;
use gemm_core::params::{Group, ParamStore};
use gemm_core::preprocess::{
    between_class_variance, extract_tiles, filter_genes, make_split, otsu_threshold, zscore_fit_transform, ExpressionMatrix,
    SlideImage, TissueMask,
};
use gemm_core::rng::{normal_matrix, seeded};
use gemm_core::Matrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    normal_matrix(&mut seeded(seed), rows, cols)
}

fn brute_otsu(h: &[u64; 256]) -> u8 {
    let mut best = (f64::NEG_INFINITY, 0u8);
    for t in 1..256usize {
        let (w0, s0) = (0..t).fold((0, 0), |(w, s), i| (w + h[i], s + h[i] * i as u64));
        let (w1, s1) = (t..256).fold((0, 0), |(w, s), i| (w + h[i], s + h[i] * i as u64));
        let v = between_class_variance(w0, s0, w1, s1);
        if v > best.0 {
            best = (v, t as u8);
        }
    }
    best.1
}

fn brute_radii(x: &Matrix, t: usize) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            let mut d: Vec<f64> = (0..x.rows())
                .filter(|&j| j != i)
                .map(|j| x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d[t - 1]
        })
        .collect()
}

fn brute_coverage(points: &Matrix, centers: &Matrix, radii: &[f64]) -> f64 {
    let mut hits = 0;
    for i in 0..points.rows() {
        let mut inside = false;
        for (j, r) in radii.iter().enumerate() {
            let d = points.row(i).iter().zip(centers.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            inside |= d <= *r;
        }
        hits += usize::from(inside);
    }
    hits as f64 / points.rows() as f64
}

fn small_fusion() -> FusionConfig {
    FusionConfig { d: 8, heads: 2, depth: 1, ffn_mult: 2, dropout: 0.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn otsu_matches_exhaustive_search(bins in proptest::collection::vec(0u64..1000, 256), zero_out in 0usize..250) {
        let mut h = [0u64; 256];
        h.copy_from_slice(&bins);
        for v in h.iter_mut().take(zero_out) {
            *v = 0;
        }
        let occupied = h.iter().filter(|&&c| c > 0).count();
        prop_assume!(occupied >= 2);
        prop_assert_eq!(otsu_threshold(&h).unwrap(), brute_otsu(&h));
    }

    #[test]
    fn tiling_matches_pixel_count(w in 1usize..40, h in 1usize..40, size in 1usize..12, min in 0.0f64..0.99, seed in any::<u64>()) {
        let bits: Vec<bool> = {
            let m = matrix(h, w, seed);
            m.as_slice().iter().map(|v| *v > 0.0).collect()
        };
        let mask = TissueMask::from_fn(w, h, 1, |x, y| bits[y * w + x]);
        let slide = SlideImage::filled("s", w, h, [200, 100, 150]);
        let tiles = extract_tiles(&slide, &mask, size, min).unwrap();
        let mut expect = Vec::new();
        for ty in 0..h / size {
            for tx in 0..w / size {
                let mut count = 0;
                for y in ty * size..(ty + 1) * size {
                    for x in tx * size..(tx + 1) * size {
                        count += usize::from(bits[y * w + x]);
                    }
                }
                if count as f64 / (size * size) as f64 > min {
                    expect.push((tx * size, ty * size));
                }
            }
        }
        let got: Vec<(usize, usize)> = tiles.iter().map(|t| (t.origin_x, t.origin_y)).collect();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn zscore_standardizes_training_rows(n in 5usize..40, g in 1usize..6, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let genes: Vec<String> = (0..g).map(|j| format!("g{j}")).collect();
        let values = matrix(n, g, seed).map(|v| 5.0 + 3.0 * v);
        let m = ExpressionMatrix::dense(ids.clone(), genes, values);
        let split = make_split(&ids, 0.2, seed).unwrap();
        let (z, _) = zscore_fit_transform(&m, &split, false).unwrap();
        let index = z.sample_index();
        let train: Vec<usize> = split.train_ids.iter().map(|id| index[id.as_str()]).collect();
        let t = z.values.select_rows(&train);
        for j in 0..g {
            let col = t.column(j);
            let k = col.len() as f64;
            let mean = col.iter().sum::<f64>() / k;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gene_filter_is_idempotent(n in 1usize..20, g in 1usize..10, max in 0.0f64..1.0, seed in any::<u64>()) {
        let m = matrix(n, g, seed);
        let rows: Vec<Vec<Option<f64>>> = (0..n).map(|i| m.row(i).iter().map(|&v| (v > -0.5).then_some(v)).collect()).collect();
        let e = ExpressionMatrix::from_options(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..g).map(|j| format!("g{j}")).collect(),
            &rows,
        ).unwrap();
        if let Ok(once) = filter_genes(&e, max) {
            prop_assert_eq!(filter_genes(&once, max).unwrap(), once);
        }
    }

    #[test]
    fn split_is_a_partition(n in 5usize..1000, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("case-{i}")).collect();
        let s = make_split(&ids, frac, seed).unwrap();
        prop_assert_eq!(s.train_ids.len() + s.test_ids.len(), n);
        prop_assert!(!s.train_ids.is_empty() && !s.test_ids.is_empty());
        let mut all: Vec<&String> = s.train_ids.iter().chain(&s.test_ids).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.clone(), make_split(&ids, frac, seed).unwrap());
    }

    #[test]
    fn precision_recall_matches_brute_force(n in 2usize..30, m in 2usize..30, g in 1usize..6, t in 1usize..4, seed in any::<u64>()) {
        prop_assume!(n > t && m > t);
        let real = matrix(n, g, seed);
        let gen = matrix(m, g, seed ^ 0xABCD).map(|v| 0.5 + 1.2 * v);
        let (p, r) = precision_recall(&real, &gen, t).unwrap();
        prop_assert_eq!(p, brute_coverage(&gen, &real, &brute_radii(&real, t)));
        prop_assert_eq!(r, brute_coverage(&real, &gen, &brute_radii(&gen, t)));
    }

    #[test]
    fn correlation_mse_invariances(n in 3usize..25, g in 1usize..8, a in 0.1f64..10.0, b in -5.0f64..5.0, seed in any::<u64>()) {
        let real = matrix(n, g, seed);
        let gen = matrix(n + 2, g, seed.wrapping_add(1));
        let base = correlation_mse(&real, &gen, None).unwrap().value;
        prop_assert!(base >= 0.0);
        prop_assert!(correlation_mse(&real, &real, None).unwrap().value == 0.0);
        // symmetric in its arguments
        prop_assert!((correlation_mse(&gen, &real, None).unwrap().value - base).abs() < 1e-12);
        // invariant to positive affine rescaling of the generated profiles
        let scaled = gen.map(|v| a * v + b);
        prop_assert!((correlation_mse(&real, &scaled, None).unwrap().value - base).abs() < 1e-9);
        // invariant to a shared permutation of genes
        let perm: Vec<usize> = (0..g).rev().collect();
        let permuted = correlation_mse(&real.select_cols(&perm), &gen.select_cols(&perm), None).unwrap().value;
        prop_assert!((permuted - base).abs() < 1e-12);
    }

    #[test]
    fn film_is_identity_at_init(n in 1usize..10, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let net = FusionNet::new(&mut store, "f", Group::Generator, FusionVariant::Full, &small_fusion(), &mut rng).unwrap();
        let e = normal_matrix(&mut rng, n, 8);
        let c = normal_matrix(&mut rng, 1, 8);
        let mut g = Graph::new();
        let ev = g.constant(e.clone());
        let cv = g.constant(c);
        let out = net.film.as_ref().unwrap().modulate(&mut g, &store, ev, cv).unwrap();
        prop_assert_eq!(g.value(out).as_slice(), e.as_slice());
    }

    #[test]
    fn full_fusion_ignores_patch_order(n in 1usize..8, m in 1usize..5, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let net = FusionNet::new(&mut store, "f", Group::Generator, FusionVariant::Full, &small_fusion(), &mut rng).unwrap();
        let e_img = normal_matrix(&mut rng, n, 8);
        let e_text = normal_matrix(&mut rng, m, 8);
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left(seed as usize % n);
        order.swap(0, n - 1);
        let a = net.fuse(&store, &e_img, &e_text).unwrap();
        let b = net.fuse(&store, &e_img.select_rows(&order), &e_text).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn linear_critic_penalty_closed_form(b in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let critic = LinearCritic::new(&mut store, "c", w, &mut rng);
        let mut g = Graph::new();
        let real = g.constant(normal_matrix(&mut rng, b, w));
        let fake = g.constant(normal_matrix(&mut rng, b, w));
        let eps = Matrix::from_fn(b, 1, |i, _| (i as f64 + 0.5) / b as f64);
        let gp = gradient_penalty(&mut g, &critic, &store, real, fake, None, &eps).unwrap();
        let norm = store.value(critic.layer.weight).as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((g.value(gp)[(0, 0)] - (norm - 1.0).powi(2)).abs() < 1e-10);
    }
}

#[test]
fn full_fusion_gradients_match_finite_differences() {
    let mut rng = seeded(17);
    let mut store = ParamStore::new();
    let net = FusionNet::new(&mut store, "f", Group::Generator, FusionVariant::Full, &small_fusion(), &mut rng).unwrap();
    let e_img = normal_matrix(&mut rng, 3, 8);
    let e_text = normal_matrix(&mut rng, 4, 8);
    let probe = normal_matrix(&mut rng, 1, 8);
    let loss = |img: &Matrix, text: &Matrix| -> (Graph, [gemm_core::Var; 3]) {
        let mut g = Graph::new();
        let a = g.variable(img.clone());
        let b = g.variable(text.clone());
        let out = net.forward(&mut g, &store, a, b, &mut Mode::Eval).unwrap();
        let p = g.constant(probe.clone());
        let prod = g.mul(out, p);
        let l = g.sum(prod);
        (g, [a, b, l])
    };
    let (g, [a, b, l]) = loss(&e_img, &e_text);
    let grads = g.backward(l);
    let value = |g: &Graph, l| g.value(l)[(0, 0)];
    let num_img = finite_difference(&e_img, 1e-6, |m| {
        let (g, [_, _, l]) = loss(m, &e_text);
        value(&g, l)
    });
    let num_text = finite_difference(&e_text, 1e-6, |m| {
        let (g, [_, _, l]) = loss(&e_img, m);
        value(&g, l)
    });
    assert!(max_relative_error(grads.get(a).unwrap(), &num_img, 1e-6) < 1e-4);
    assert!(max_relative_error(grads.get(b).unwrap(), &num_text, 1e-6) < 1e-4);
}

#[test]
fn utility_with_shuffled_labels_falls_to_majority_rate() {
    use gemm_core::classifiers::{ClassifierKind, ClassifierSpec};
    use gemm_core::metrics::utility;
    use gemm_core::synthetic::make_synthetic_dataset;
    use rand::seq::SliceRandom;

    // A single permutation keeps some chance alignment with the class signal, and on well
    // separated data one fit can land far from chance either way. The null holds on average.
    const PERMUTATIONS: u64 = 10;
    for seed in 0..3u64 {
        let ds = make_synthetic_dataset(400, 16, 2, seed).unwrap();
        let x = &ds.expression.values;
        let train: Vec<usize> = (0..200).collect();
        let test: Vec<usize> = (200..400).collect();
        let (xtr, xte) = (x.select_rows(&train), x.select_rows(&test));
        let honest: Vec<usize> = train.iter().map(|&i| ds.labels[i]).collect();
        let truth: Vec<usize> = test.iter().map(|&i| ds.labels[i]).collect();
        let majority = {
            let ones = truth.iter().filter(|&&l| l == 1).count() as f64 / truth.len() as f64;
            ones.max(1.0 - ones)
        };
        for kind in [ClassifierKind::LogisticRegression, ClassifierKind::RandomForest] {
            let spec = ClassifierSpec::new(kind);
            let real = utility(&xtr, &honest, &xte, &truth, &spec, seed).unwrap();
            assert!(real.accuracy > 0.9, "{kind:?} seed {seed}: honest labels gave {}", real.accuracy);
            let mut total = 0.0;
            for p in 0..PERMUTATIONS {
                let mut shuffled = honest.clone();
                shuffled.shuffle(&mut seeded(seed * 1000 + p));
                total += utility(&xtr, &shuffled, &xte, &truth, &spec, seed).unwrap().accuracy;
            }
            let mean = total / PERMUTATIONS as f64;
            assert!((mean - majority).abs() <= 0.1, "{kind:?} seed {seed}: mean {mean} vs majority {majority}");
        }
    }
}
