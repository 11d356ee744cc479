use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gemm_core::gan::{train as run_training, Cohort, ModelKind, StepLosses, TrainState, TrainSummary};
use gemm_core::rng::{stream, tags};
use gemm_core::Error as CoreError;
use rand::seq::index::sample;

use super::{load_prepared, Prepared};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::workdir::Layout;

pub const TRACE_HEADER: &str = "step\tcritic_loss\tgen_loss\tgp\twasserstein\trecon\tkl";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub final_checkpoint: PathBuf,
}

fn trace_line(l: &StepLosses) -> String {
    format!("{}\t{}\t{}\t{}\t{}\t{}\t{}", l.step, l.critic_loss, l.gen_loss, l.gp, l.wasserstein, l.recon, l.kl)
}

/// Training and early-stopping cohorts. Without early stopping every training case is used.
fn fit_and_validation(cfg: &RunConfig, train: &Cohort) -> (Cohort, Option<Cohort>) {
    if cfg.model.early_stopping.is_none() || train.len() < 2 {
        return (train.clone(), None);
    }
    let n = train.len();
    let k = ((n as f64 * cfg.training.validation_fraction).round() as usize).clamp(1, n - 1);
    let mut held = sample(&mut stream(cfg.seed, tags::VALIDATE, 1), n, k).into_vec();
    held.sort_unstable();
    let fit: Vec<usize> = (0..n).filter(|i| held.binary_search(i).is_err()).collect();
    (train.subset(&fit), Some(train.subset(&held)))
}

/// Trains on already loaded cohorts without touching the filesystem.
pub fn train_in_memory(cfg: &RunConfig, data: &Prepared, mut on_step: impl FnMut(&StepLosses, &TrainState) -> bool) -> Result<TrainState> {
    let (fit, validation) = fit_and_validation(cfg, &data.train);
    let mut state = TrainState::for_cohort(cfg.model.clone(), &fit)?;
    run_training(&mut state, &fit, validation.as_ref(), &mut on_step)?;
    Ok(state)
}

/// Keeps the trace rows recorded before `step` so a resumed run continues it.
fn truncate_trace(path: &Path, step: u64) -> Result<Vec<String>> {
    let mut lines = vec![TRACE_HEADER.to_string()];
    if let Ok(f) = fs::File::open(path) {
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(AppError::io(path))?;
            let s: u64 = line.split('\t').next().and_then(|v| v.parse().ok()).unwrap_or(u64::MAX);
            if s < step {
                lines.push(line);
            }
        }
    }
    Ok(lines)
}

/// Trains the configured model, writing periodic and final checkpoints, a
/// per-step loss trace and a structured step log.
pub fn train(cfg: &RunConfig, layout: &Layout, resume: Option<&Path>) -> Result<TrainOutcome> {
    let data = load_prepared(layout, cfg.model.kind == ModelKind::Gemm)?;
    let (fit, validation) = fit_and_validation(cfg, &data.train);
    let mut state = match resume {
        Some(path) => {
            if !path.is_file() {
                return Err(AppError::Data(format!("checkpoint {} not found", path.display())));
            }
            let (mut state, meta) = load_checkpoint(path)?;
            if meta.gene_ids != data.gene_ids {
                return Err(AppError::Data(format!("checkpoint {} was trained on different genes", path.display())));
            }
            state.config.max_steps = cfg.model.max_steps;
            state
        }
        None => TrainState::for_cohort(cfg.model.clone(), &fit)?,
    };
    let start = state.step;

    let ckpt_dir = layout.checkpoints();
    fs::create_dir_all(&ckpt_dir).map_err(AppError::io(&ckpt_dir))?;
    cfg.echo(&layout.train())?;
    let trace_path = layout.loss_trace();
    let mut trace_lines = truncate_trace(&trace_path, start)?;
    trace_lines.push(String::new());
    fs::write(&trace_path, trace_lines.join("\n")).map_err(AppError::io(&trace_path))?;
    if start == 0 {
        let _ = fs::remove_file(layout.step_log());
    }
    let open_append = |p: &Path| fs::OpenOptions::new().create(true).append(true).open(p).map_err(AppError::io(p));
    let mut trace = std::io::BufWriter::new(open_append(&trace_path)?);
    let mut steps = std::io::BufWriter::new(open_append(&layout.step_log())?);

    let mut failure: Option<AppError> = None;
    let mut last_good: Option<PathBuf> = resume.map(Path::to_path_buf);
    let every = cfg.training.checkpoint_every;
    let log_every = cfg.training.log_every;
    let result = run_training(&mut state, &fit, validation.as_ref(), |l, s| {
        let mut record = || -> Result<()> {
            writeln!(trace, "{}", trace_line(l)).map_err(AppError::io(&trace_path))?;
            let json = serde_json::to_string(l).map_err(|e| AppError::format(&layout.step_log(), e))?;
            writeln!(steps, "{json}").map_err(AppError::io(&layout.step_log()))?;
            if every > 0 && s.step % every == 0 {
                let path = ckpt_dir.join(format!("step_{:06}.ckpt", s.step));
                save_checkpoint(&path, s, &data.gene_ids)?;
                trace.flush().map_err(AppError::io(&trace_path))?;
                last_good = Some(path);
            }
            Ok(())
        };
        if let Err(e) = record() {
            failure = Some(e);
            return false;
        }
        if s.step % log_every == 0 {
            println!(
                "step {:>6}  critic {:>10.4}  gen {:>10.4}  gp {:>8.4}  w {:>8.4}",
                s.step, l.critic_loss, l.gen_loss, l.gp, l.wasserstein
            );
        }
        true
    });
    trace.flush().map_err(AppError::io(&trace_path))?;
    steps.flush().map_err(AppError::io(&layout.step_log()))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = match result {
        Ok(s) => s,
        Err(e @ CoreError::NonFiniteLoss { .. }) => {
            let kept = last_good.map_or("none".to_string(), |p| p.display().to_string());
            return Err(AppError::TrainingAbort(format!("{e}; last good checkpoint: {kept}")));
        }
        Err(e) => return Err(e.into()),
    };
    let final_checkpoint = layout.final_checkpoint();
    save_checkpoint(&final_checkpoint, &state, &data.gene_ids)?;
    println!("trained {} steps (now at step {}); final checkpoint {}", summary.steps_run, summary.final_step, final_checkpoint.display());
    Ok(TrainOutcome { summary, final_checkpoint })
}
