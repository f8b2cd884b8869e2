//! Episodes, training runs, evaluation and the GCN-versus-flat ablation.
//!
//! Runs are independent and execute on a bounded worker pool. Workers send
//! [`RunResult`]s back over a channel; only the caller writes files.

mod env;
mod report;
mod run;

pub use env::{env_spec, Environment, StepInfo, StepOutcome, TabularEnv, TrafficEnv};
pub use report::{
    curve_csv, metrics_csv, optimization_rate, text_table, ComparisonReport, SeedRow, METRICS_HEADER, REPORT_FORMAT_VERSION,
};
pub use run::{
    episode_seed, evaluate, final_quarter_mean, fingerprint, fit, run_episode, summarize, train, EpisodeStats, EpochRecord,
    EvalSummary, Fit, RunError, RunResult, Schedule,
};

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::config::ExperimentConfig;
use crate::nn::EncoderKind;
use crate::rl::Algorithm;

/// One training run: a config and one of its seeds.
#[derive(Debug, Clone)]
pub struct Job {
    pub cfg: ExperimentConfig,
    pub seed: u64,
}

impl Job {
    /// Jobs for every seed of `cfg`.
    pub fn all_seeds(cfg: &ExperimentConfig) -> Vec<Job> {
        cfg.run.seeds.iter().map(|&seed| Job { cfg: cfg.clone(), seed }).collect()
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `jobs` on up to `workers` threads (0 = all cores). `on_result` is
/// called on the calling thread as results arrive, with the job's index.
/// Returns the results in job order.
pub fn run_jobs(
    jobs: &[Job],
    workers: usize,
    mut on_result: impl FnMut(usize, &Result<RunResult, RunError>),
) -> Vec<Result<RunResult, RunError>> {
    let workers = if workers == 0 { default_workers() } else { workers }.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let mut slots: Vec<Option<Result<RunResult, RunError>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                if tx.send((i, train(&job.cfg, job.seed))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            on_result(i, &result);
            slots[i] = Some(result);
        }
    });
    slots.into_iter().map(|r| r.expect("every job reports")).collect()
}

/// `<out>/<scenario>/<algorithm>/<encoder>/seed<k>`.
pub fn run_dir(out: &Path, result: &RunResult) -> PathBuf {
    out.join(result.scenario.as_str())
        .join(result.algorithm.as_str())
        .join(result.encoder.as_str())
        .join(format!("seed{}", result.seed))
}

/// Writes metrics, checkpoints, the resolved config and the optional trace of
/// one run. Returns the run directory.
pub fn write_run(out: &Path, cfg: &ExperimentConfig, result: &RunResult) -> std::io::Result<PathBuf> {
    let dir = run_dir(out, result);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(result))?;
    std::fs::write(dir.join("resolved-config.toml"), cfg.to_toml_string())?;
    std::fs::write(dir.join("checkpoint.bin"), &result.final_checkpoint)?;
    for (epoch, bytes) in &result.checkpoints {
        std::fs::write(dir.join(format!("checkpoint-epoch{epoch}.bin")), bytes)?;
    }
    if let Some(trace) = &result.trace {
        std::fs::write(dir.join("trace.jsonl"), trace)?;
    }
    if let Some(msg) = &result.diverged {
        std::fs::write(dir.join("DIVERGED"), msg)?;
    }
    Ok(dir)
}

/// Both arms of the ablation for every seed of `cfg`: GCN first, then flat.
pub fn ablation_jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    [EncoderKind::Gcn, EncoderKind::Flat]
        .into_iter()
        .flat_map(|kind| {
            let mut arm = cfg.clone();
            arm.encoder.kind = kind;
            Job::all_seeds(&arm)
        })
        .collect()
}

/// Configs of a multi-algorithm sweep; algorithms that cannot act in the
/// scenario are skipped.
pub fn comparison_configs(cfg: &ExperimentConfig, algorithms: &[Algorithm]) -> Vec<ExperimentConfig> {
    let space = env_spec(&cfg.scenario).action_space;
    algorithms
        .iter()
        .filter(|a| a.supports(space))
        .map(|&a| {
            let mut c = cfg.clone();
            if a != cfg.algorithm.algorithm {
                c.algorithm = crate::rl::AlgoConfig::for_algorithm(a);
            }
            c
        })
        .collect()
}
