#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gemm_gan::commands::{make_synthetic, SynthArgs};
use gemm_gan::config::RunConfig;
use gemm_gan::workdir::Layout;

pub const BIN: &str = env!("CARGO_BIN_EXE_gemm-gan");

/// A small synthetic cohort and its config, with a few tweaks for fast tests.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config_path: PathBuf,
    pub cfg: RunConfig,
}

impl Fixture {
    pub fn new(n_cases: usize, genes: usize, seed: u64) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let args = SynthArgs { n_cases, genes, classes: 2, slide_size: 64, seed };
        let config_path = make_synthetic(&args, dir.path()).expect("synthetic cohort");
        let mut cfg = RunConfig::load(&config_path).expect("config");
        cfg.eval.n_runs = 2;
        cfg.training.log_every = 1000;
        cfg.training.checkpoint_every = 0;
        std::fs::write(&config_path, cfg.to_toml().unwrap()).unwrap();
        let cfg = cfg.finalize().unwrap();
        Self { dir, config_path, cfg }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.cfg.paths.workdir)
    }

    pub fn rewrite_config(&mut self, edit: impl FnOnce(&mut RunConfig)) {
        let mut cfg = RunConfig::load(&self.config_path).unwrap();
        edit(&mut cfg);
        std::fs::write(&self.config_path, cfg.to_toml().unwrap()).unwrap();
        self.cfg = cfg.finalize().unwrap();
    }

    /// Runs the binary with `--config` prepended.
    pub fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--config", self.config_path.to_str().unwrap()];
        full.extend_from_slice(args);
        run_bin(&full, &[])
    }
}

pub fn run_bin(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("GEMM_GAN_WORKDIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn gemm-gan")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn assert_ok(out: &Output) {
    assert_eq!(code(out), 0, "stderr: {}", stderr(out));
}
