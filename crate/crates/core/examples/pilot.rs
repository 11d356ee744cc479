//! Calibration run for the toy benchmark: trains the full model on the
//! synthetic 2-class cohort in memory and scores three generated cohorts.
//!
//! `cargo run --release -p gemm-core --example pilot -- <seed> <steps>`

use std::time::Instant;

use gemm_core::classifiers::{ClassifierKind, ClassifierSpec};
use gemm_core::fusion::FusionConfig;
use gemm_core::gan::{sample_profiles, train, TrainConfig, TrainState};
use gemm_core::metrics::{correlation_mse, precision_recall, utility};
use gemm_core::pipeline::{cohort_labels, prepare_synthetic, PreprocessConfig};
use gemm_core::synthetic::SyntheticConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(7, |s| s.parse().unwrap());
    let steps: u64 = args.get(2).map_or(2000, |s| s.parse().unwrap());
    let synth = SyntheticConfig::new(200, 16, 2, seed);
    let pre = PreprocessConfig { tile_size: 16, ..PreprocessConfig::default() };
    let (_, prep) = prepare_synthetic(&synth, &pre, 64, seed).unwrap();
    let config = TrainConfig {
        fusion: FusionConfig { d: 16, heads: 4, depth: 2, ffn_mult: 2, dropout: 0.1 },
        d_noise: 16,
        n_patches: 8,
        batch_size: 64,
        hidden: vec![128, 128],
        max_steps: steps,
        max_tokens: 64,
        seed,
        ..TrainConfig::default()
    };
    let mut state = TrainState::for_cohort(config, &prep.train).unwrap();
    let t0 = Instant::now();
    train(&mut state, &prep.train, None, |l, _| {
        if l.step % 250 == 0 {
            println!("{} c={:.3} g={:.3} w={:.3} gp={:.3} {:?}", l.step, l.critic_loss, l.gen_loss, l.wasserstein, l.gp, t0.elapsed());
        }
        true
    })
    .unwrap();
    println!("train {:?}", t0.elapsed());
    let real = &prep.test.profiles;
    let labels = cohort_labels(&prep.test, &prep.labels).unwrap();
    let runs = sample_profiles(&state, &prep.test, 3, seed).unwrap();
    for gen in &runs {
        let (p, r) = precision_recall(real, gen, 10).unwrap();
        let c = correlation_mse(real, gen, None).unwrap().value;
        let u = utility(gen, &labels, real, &labels, &ClassifierSpec::new(ClassifierKind::LogisticRegression), seed).unwrap();
        println!("p={p:.3} r={r:.3} cmse={c:.4} util={:.3}", u.accuracy);
    }
    println!("total {:?}", t0.elapsed());
}
