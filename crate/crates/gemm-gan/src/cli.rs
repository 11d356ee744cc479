//! Argument parsing and dispatch. Flags override config-file keys.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gemm_core::fusion::FusionVariant;
use gemm_core::gan::ModelKind;

use crate::commands::{self, SynthArgs};
use crate::config::{RunConfig, WORKDIR_ENV};
use crate::error::{AppError, Result};
use crate::workdir::{Layout, WorkdirLock};

#[derive(Debug, Parser)]
#[command(name = "gemm-gan", version, about = "Multimodal-conditioned gene expression synthesis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Workdir for all artifacts (overrides the config file).
    #[arg(long, global = true, env = WORKDIR_ENV)]
    pub workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write PNG plots next to evaluation reports.
    #[arg(long, global = true)]
    pub plots: bool,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ModelKind>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<FusionVariant>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tile slides, filter and standardize expression, summarize cases, split.
    Preprocess,
    /// Cache frozen-encoder embeddings of tiles and summaries.
    Embed,
    /// Train the configured model or baseline.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Write generated profiles for the test cases.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n_runs: Option<usize>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n_runs: Option<usize>,
    },
    /// Train and evaluate each fusion variant under one seed and budget.
    Ablate {
        #[arg(long)]
        max_steps: Option<u64>,
        /// Comma-separated subset of variants.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<FusionVariant>>,
    },
    /// Write a synthetic cohort and a matching config.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_cases: usize,
        #[arg(long, default_value_t = 16)]
        genes: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        slide_size: usize,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: gemm_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<FusionVariant, String> {
    s.parse().map_err(|e: gemm_core::Error| e.to_string())
}

/// Effective configuration: file (or defaults), then flags.
pub fn effective_config(global: &GlobalArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &global.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    cfg.plots |= global.plots;
    match command {
        Command::Train { model, checkpoint_every, .. } => {
            if let Some(k) = model.kind {
                cfg.model.kind = k;
            }
            if let Some(v) = model.variant {
                cfg.model.variant = v;
            }
            if let Some(m) = model.max_steps {
                cfg.model.max_steps = m;
            }
            if let Some(b) = model.batch_size {
                cfg.model.batch_size = b;
            }
            if let Some(c) = checkpoint_every {
                cfg.training.checkpoint_every = *c;
            }
        }
        Command::Evaluate { n_runs: Some(n), .. } | Command::Generate { n_runs: Some(n), .. } => cfg.eval.n_runs = *n,
        Command::Ablate { max_steps, variants } => {
            if max_steps.is_some() {
                cfg.ablation.max_steps = *max_steps;
            }
            if let Some(v) = variants {
                cfg.ablation.variants = v.clone();
            }
        }
        _ => {}
    }
    cfg.finalize()
}

/// Runs one parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    if let Command::MakeSynthetic { out, n_cases, genes, classes, slide_size } = &cli.command {
        let args = SynthArgs {
            n_cases: *n_cases,
            genes: *genes,
            classes: *classes,
            slide_size: *slide_size,
            seed: cli.global.seed.unwrap_or(0),
        };
        let path = commands::make_synthetic(&args, out)?;
        println!("synthetic cohort of {n_cases} cases written to {}; config {}", out.display(), path.display());
        return Ok(());
    }
    let cfg = effective_config(&cli.global, &cli.command)?;
    let layout = Layout::new(&cfg.paths.workdir);
    let _lock = WorkdirLock::acquire(&layout.root)?;
    match &cli.command {
        Command::Preprocess => {
            let o = commands::preprocess(&cfg, &layout)?;
            println!("{} cases, {} tiles, {} genes; {} slides skipped", o.cases, o.tiles, o.genes, o.failures.len());
        }
        Command::Embed => {
            let n = commands::embed(&cfg, &layout)?;
            println!("embedded {n} cases");
        }
        Command::Train { resume, .. } => {
            commands::train(&cfg, &layout, resume.as_deref())?;
        }
        Command::Generate { checkpoint, .. } => {
            let out = commands::generate(&cfg, &layout, checkpoint.as_deref(), cfg.eval.n_runs)?;
            println!("generated profiles written to {}", out.display());
        }
        Command::Evaluate { checkpoint, .. } => {
            commands::evaluate(&cfg, &layout, checkpoint.as_deref())?;
            println!("report written to {}", layout.report().display());
        }
        Command::Ablate { .. } => {
            let t = commands::ablate(&cfg, &layout)?;
            let failed = t.rows.iter().filter(|r| r.failure.is_some()).count();
            println!("{} variants, {failed} failed; table in {}", t.rows.len(), layout.ablate().display());
        }
        Command::MakeSynthetic { .. } => unreachable!("handled above"),
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

impl From<clap::Error> for AppError {
    fn from(e: clap::Error) -> Self {
        AppError::Usage(e.to_string())
    }
}
