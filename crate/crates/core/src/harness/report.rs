use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::nn::EncoderKind;
use crate::rl::Algorithm;
use crate::sim::Scenario;

use super::run::{EpochRecord, RunResult};

pub const REPORT_FORMAT_VERSION: u32 = 1;

pub const METRICS_HEADER: &str = "epoch,seed,scenario,algorithm,encoder,mean_reward,collisions,lane_changes,exits,mean_speed";

/// The per-epoch metrics stream of one run as CSV.
pub fn metrics_csv(run: &RunResult) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in &run.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch, run.seed, run.scenario, run.algorithm, run.encoder, r.mean_reward, r.collisions, r.lane_changes, r.exits, r.mean_speed
        )
        .expect("string write");
    }
    out
}

/// Mean and population standard deviation of each epoch's reward across runs.
/// Runs that stopped early contribute only to the epochs they completed.
pub fn curve_csv(runs: &[&RunResult]) -> String {
    let epochs = runs.iter().map(|r| r.records.len()).max().unwrap_or(0);
    let mut out = String::from("epoch,mean,std\n");
    for e in 0..epochs {
        let xs: Vec<f64> = runs.iter().filter_map(|r| r.records.get(e)).map(|r: &EpochRecord| r.mean_reward).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        writeln!(out, "{e},{mean},{std}").expect("string write");
    }
    out
}

/// Final-quarter reward of both arms for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub drl: Option<f64>,
    pub grl: Option<f64>,
    pub drl_diverged: Option<String>,
    pub grl_diverged: Option<String>,
}

/// GCN arm versus flat arm for one scenario and algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub scenario: Scenario,
    pub algorithm: Algorithm,
    /// Mean over seeds of the flat arm's final-quarter reward.
    pub drl_mean: Option<f64>,
    pub grl_mean: Option<f64>,
    /// `(grl − drl) / |drl| · 100`.
    pub optimization_rate_pct: Option<f64>,
    pub seeds: Vec<SeedRow>,
}

pub fn optimization_rate(drl: f64, grl: f64) -> f64 {
    (grl - drl) / drl.abs() * 100.0
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ComparisonReport {
    /// Pairs runs by seed. `runs` holds both arms of one scenario/algorithm.
    pub fn from_runs(scenario: Scenario, algorithm: Algorithm, runs: &[RunResult]) -> Self {
        let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let arm = |seed: u64, kind: EncoderKind| runs.iter().find(|r| r.seed == seed && r.encoder == kind);
        let rows: Vec<SeedRow> = seeds
            .into_iter()
            .map(|seed| {
                let flat = arm(seed, EncoderKind::Flat);
                let gcn = arm(seed, EncoderKind::Gcn);
                SeedRow {
                    seed,
                    drl: flat.and_then(RunResult::final_quarter_mean),
                    grl: gcn.and_then(RunResult::final_quarter_mean),
                    drl_diverged: flat.and_then(|r| r.diverged.clone()),
                    grl_diverged: gcn.and_then(|r| r.diverged.clone()),
                }
            })
            .collect();
        Self::from_rows(scenario, algorithm, rows)
    }

    pub fn from_rows(scenario: Scenario, algorithm: Algorithm, seeds: Vec<SeedRow>) -> Self {
        let drl_mean = mean_of(seeds.iter().map(|r| r.drl));
        let grl_mean = mean_of(seeds.iter().map(|r| r.grl));
        let optimization_rate_pct = match (drl_mean, grl_mean) {
            (Some(d), Some(g)) if d != 0.0 => Some(optimization_rate(d, g)),
            _ => None,
        };
        Self {
            format_version: REPORT_FORMAT_VERSION,
            scenario,
            algorithm,
            drl_mean,
            grl_mean,
            optimization_rate_pct,
            seeds,
        }
    }

    /// Seeds on which the GCN arm scored at least the flat arm.
    pub fn grl_wins(&self) -> usize {
        self.seeds
            .iter()
            .filter(|r| matches!((r.drl, r.grl), (Some(d), Some(g)) if g >= d))
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

/// Aligned plain-text table, one line per report plus per-seed detail.
pub fn text_table(reports: &[ComparisonReport]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<16} {:<12} {:>14} {:>14} {:>12}",
        "scenario", "algorithm", "reward (DRL)", "reward (GRL)", "rate (%)"
    )
    .expect("string write");
    for r in reports {
        writeln!(
            out,
            "{:<16} {:<12} {:>14} {:>14} {:>12}",
            r.scenario.as_str(),
            r.algorithm.as_str(),
            cell(r.drl_mean),
            cell(r.grl_mean),
            cell(r.optimization_rate_pct)
        )
        .expect("string write");
        for s in &r.seeds {
            let mark = |d: &Option<String>| if d.is_some() { " (diverged)" } else { "" };
            writeln!(
                out,
                "  seed {:<9} {:>12} {:>14}{} {:>14}{}",
                s.seed,
                "",
                cell(s.drl),
                mark(&s.drl_diverged),
                cell(s.grl),
                mark(&s.grl_diverged)
            )
            .expect("string write");
        }
    }
    out
}
