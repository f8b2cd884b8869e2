use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use gcav::config::{ConfigError, ExperimentConfig};
use gcav::harness::{
    ablation_jobs, comparison_configs, curve_csv, evaluate, run_jobs, text_table, write_run, ComparisonReport, Job,
    RunResult,
};
use gcav::nn::EncoderKind;
use gcav::rl::Algorithm;
use gcav::tensor::Checkpoint;

#[derive(Parser)]
#[command(name = "gcav", version, about = "Graph reinforcement learning for mixed autonomy traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set run.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of the configured encoder and algorithm.
    Train(ConfigArgs),
    /// Roll out a checkpoint greedily.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train GCN and flat arms on identical seeds and compare them.
    Ablate(ConfigArgs),
    /// Run the ablation for several algorithms and tabulate the results.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated algorithm ids; all that fit the scenario by default.
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<String>,
    },
    /// Parse and validate a config, then print it fully resolved.
    ValidateConfig {
        path: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the available algorithm ids.
    ListAlgorithms,
}

/// A failure that maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn config_error(e: ConfigError) -> anyhow::Error {
    UsageError(format!("config error: {e}")).into()
}

fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let o: Vec<&str> = overrides.iter().map(String::as_str).collect();
    match path {
        Some(p) => ExperimentConfig::load(p, &o),
        None => ExperimentConfig::from_toml_str("", &o),
    }
    .map_err(config_error)
}

fn progress(r: &Result<RunResult, gcav::harness::RunError>) {
    match r {
        Ok(r) => eprintln!(
            "finished {}/{}/{} seed {} in {:.1}s{}",
            r.scenario,
            r.algorithm,
            r.encoder,
            r.seed,
            r.wall_clock_s,
            r.diverged.as_deref().map(|d| format!(" (diverged: {d})")).unwrap_or_default()
        ),
        Err(e) => eprintln!("run failed: {e}"),
    }
}

/// Runs the jobs, writes every run directory and returns the results.
fn execute(jobs: &[Job], workers: usize, out: &Path) -> anyhow::Result<Vec<RunResult>> {
    let results = run_jobs(jobs, workers, |_, r| progress(r));
    let mut done = Vec::with_capacity(results.len());
    for (job, r) in jobs.iter().zip(results) {
        let r = r.with_context(|| format!("seed {}", job.seed))?;
        let dir = write_run(out, &job.cfg, &r).with_context(|| format!("writing results under {}", out.display()))?;
        eprintln!("wrote {}", dir.display());
        done.push(r);
    }
    Ok(done)
}

fn write_curves(out: &Path, results: &[RunResult]) -> anyhow::Result<()> {
    for kind in [EncoderKind::Gcn, EncoderKind::Flat] {
        let arm: Vec<&RunResult> = results.iter().filter(|r| r.encoder == kind).collect();
        if let Some(first) = arm.first() {
            let dir = out.join(first.scenario.as_str()).join(first.algorithm.as_str()).join(kind.as_str());
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("curve.csv"), curve_csv(&arm))?;
        }
    }
    Ok(())
}

fn ablate(cfg: &ExperimentConfig) -> anyhow::Result<ComparisonReport> {
    let out = &cfg.run.out_dir;
    let results = execute(&ablation_jobs(cfg), cfg.run.workers, out)?;
    write_curves(out, &results)?;
    let report = ComparisonReport::from_runs(cfg.scenario.scenario, cfg.algorithm.algorithm, &results);
    let dir = out.join(cfg.scenario.scenario.as_str()).join(cfg.algorithm.algorithm.as_str());
    std::fs::write(dir.join("ablation.json"), report.to_json())?;
    std::fs::write(dir.join("ablation.txt"), text_table(std::slice::from_ref(&report)))?;
    Ok(report)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::ListAlgorithms => {
            for a in Algorithm::ALL {
                println!("{a}");
            }
        }
        Command::ValidateConfig { path, overrides } => {
            let cfg = load(Some(&path), &overrides)?;
            print!("{}", cfg.to_toml_string());
        }
        Command::Train(args) => {
            let cfg = load(args.config.as_deref(), &args.overrides)?;
            let results = execute(&Job::all_seeds(&cfg), cfg.run.workers, &cfg.run.out_dir)?;
            write_curves(&cfg.run.out_dir, &results)?;
            if let Some(r) = results.iter().find(|r| r.diverged.is_some()) {
                bail!("seed {} diverged: {}", r.seed, r.diverged.as_deref().unwrap_or_default());
            }
        }
        Command::Evaluate {
            config,
            checkpoint,
            episodes,
            seed,
        } => {
            let cfg = load(config.config.as_deref(), &config.overrides)?;
            let file = std::fs::File::open(&checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
            let ckpt = Checkpoint::read_from(std::io::BufReader::new(file))
                .with_context(|| format!("reading {}", checkpoint.display()))?;
            let summary = evaluate(&ckpt, &cfg, episodes, seed)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Ablate(args) => {
            let cfg = load(args.config.as_deref(), &args.overrides)?;
            let report = ablate(&cfg)?;
            print!("{}", text_table(&[report]));
        }
        Command::Compare { config, algorithms } => {
            let cfg = load(config.config.as_deref(), &config.overrides)?;
            let algs = if algorithms.is_empty() {
                Algorithm::ALL.to_vec()
            } else {
                algorithms
                    .iter()
                    .map(|s| Algorithm::parse(s.trim()).ok_or_else(|| UsageError(format!("unknown algorithm `{s}`"))))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let configs = comparison_configs(&cfg, &algs);
            if configs.is_empty() {
                return Err(UsageError(format!("no listed algorithm can act in {}", cfg.scenario.scenario)).into());
            }
            let mut reports = Vec::new();
            for c in &configs {
                reports.push(ablate(c)?);
            }
            let dir = cfg.run.out_dir.join(cfg.scenario.scenario.as_str());
            std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&reports)?)?;
            let table = text_table(&reports);
            std::fs::write(dir.join("comparison.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
