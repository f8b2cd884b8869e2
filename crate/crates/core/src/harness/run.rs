use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::nn::EncoderKind;
use crate::rl::{build_agent, Agent, AgentError, Algorithm, Mode, Transition};
use crate::rng::{sub_stream_rng, Stream};
use crate::sim::{Scenario, SimError};
use crate::tensor::{Checkpoint, CheckpointError};

use super::env::{Environment, StepInfo, TrafficEnv};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("simulator rejected the actions: {0}")]
    Sim(#[from] SimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("algorithm {algorithm} cannot act in this environment")]
    Mismatch { algorithm: Algorithm },
}

/// Totals of one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeStats {
    pub reward: f64,
    pub decisions: usize,
    pub info: StepInfo,
}

impl EpisodeStats {
    pub fn mean_speed(&self) -> f64 {
        if self.info.av_speed_count == 0 {
            0.0
        } else {
            self.info.av_speed_sum / self.info.av_speed_count as f64
        }
    }
}

/// Seed of the `index`-th episode drawn from a named stream of `seed`.
pub fn episode_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    sub_stream_rng(seed, stream, index).gen()
}

/// Plays one episode of `horizon_steps` physics steps. In training mode every
/// transition goes to the agent and the episode is closed with
/// [`Agent::end_episode`].
pub fn run_episode(
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    mode: Mode,
    episode_seed: u64,
    horizon_steps: usize,
) -> Result<EpisodeStats, RunError> {
    let algorithm = agent.algorithm();
    if !algorithm.supports(env.spec().action_space) {
        return Err(RunError::Mismatch { algorithm });
    }
    let decisions = horizon_steps.div_ceil(env.steps_per_decision());
    let mut obs = env.reset(episode_seed);
    let mut stats = EpisodeStats::default();
    for _ in 0..decisions {
        let actions = agent.act(&obs, mode)?;
        let out = env.step(&actions)?;
        stats.reward += out.reward;
        stats.decisions += 1;
        stats.info.absorb(out.info);
        if mode == Mode::Train {
            agent.observe(Transition::new(obs, actions, out.reward, out.obs.clone(), out.done))?;
        }
        obs = out.obs;
        if out.done {
            break;
        }
    }
    if mode == Mode::Train {
        agent.end_episode(&obs)?;
    }
    Ok(stats)
}

/// Per-epoch training summary; counts are means per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub collisions: f64,
    pub lane_changes: f64,
    pub exits: f64,
    pub mean_speed: f64,
}

impl EpochRecord {
    pub fn from_episodes(epoch: usize, episodes: &[EpisodeStats]) -> Self {
        let n = episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeStats) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        Self {
            epoch,
            mean_reward: mean(&|e| e.reward),
            collisions: mean(&|e| e.info.collisions as f64),
            lane_changes: mean(&|e| e.info.lane_changes as f64),
            exits: mean(&|e| e.info.ramp_exits as f64),
            mean_speed: mean(&|e| e.mean_speed()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub horizon_steps: usize,
}

/// Output of [`fit`]: the completed epochs and the divergence message, if
/// training stopped early.
#[derive(Debug, Clone, Default)]
pub struct Fit {
    pub records: Vec<EpochRecord>,
    pub diverged: Option<String>,
}

/// Trains `agent` on `env` for the whole schedule. `on_epoch` runs after every
/// completed epoch. A diverged update ends training but is not an error.
pub fn fit(
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    seed: u64,
    schedule: Schedule,
    mut on_epoch: impl FnMut(&EpochRecord, &mut dyn Environment, &dyn Agent),
) -> Result<Fit, RunError> {
    let total = (schedule.epochs * schedule.episodes_per_epoch).max(1);
    let mut fit = Fit::default();
    for epoch in 0..schedule.epochs {
        let mut episodes = Vec::with_capacity(schedule.episodes_per_epoch);
        for e in 0..schedule.episodes_per_epoch {
            let index = epoch * schedule.episodes_per_epoch + e;
            agent.set_progress(index as f64 / total as f64);
            let ep_seed = episode_seed(seed, Stream::Sim, index as u64);
            match run_episode(env, agent, Mode::Train, ep_seed, schedule.horizon_steps) {
                Ok(s) => episodes.push(s),
                Err(RunError::Agent(AgentError::Diverged(msg))) => {
                    fit.diverged = Some(format!("epoch {epoch}: {msg}"));
                    return Ok(fit);
                }
                Err(e) => return Err(e),
            }
        }
        let record = EpochRecord::from_episodes(epoch, &episodes);
        if !record.mean_reward.is_finite() {
            fit.diverged = Some(format!("epoch {epoch}: reward is {}", record.mean_reward));
            return Ok(fit);
        }
        on_epoch(&record, env, agent);
        fit.records.push(record);
    }
    Ok(fit)
}

/// Everything one training run produced. Files are written by the caller.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub fingerprint: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub algorithm: Algorithm,
    pub encoder: EncoderKind,
    pub records: Vec<EpochRecord>,
    pub wall_clock_s: f64,
    pub diverged: Option<String>,
    /// `(epochs completed, checkpoint bytes)` at the configured cadence.
    pub checkpoints: Vec<(usize, Vec<u8>)>,
    pub final_checkpoint: Vec<u8>,
    pub trace: Option<Vec<u8>>,
}

impl RunResult {
    /// Mean reward of the last quarter of the epochs (at least one).
    pub fn final_quarter_mean(&self) -> Option<f64> {
        final_quarter_mean(&self.records)
    }
}

pub fn final_quarter_mean(records: &[EpochRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let keep = records.len().div_ceil(4);
    let tail = &records[records.len() - keep..];
    Some(tail.iter().map(|r| r.mean_reward).sum::<f64>() / keep as f64)
}

/// Stable digest of the resolved configuration text.
pub fn fingerprint(cfg: &ExperimentConfig) -> String {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    cfg.to_toml_string().hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Trains one seed of `cfg` from scratch.
pub fn train(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult, RunError> {
    let start = Instant::now();
    let mut env = TrafficEnv::new(cfg.scenario.clone(), cfg.reward);
    let mut agent = build_agent(&cfg.algorithm, &cfg.encoder, env.spec(), seed)?;
    let (alg, enc) = (cfg.algorithm.algorithm.as_str(), cfg.encoder.kind.as_str());
    let schedule = Schedule {
        epochs: cfg.run.epochs,
        episodes_per_epoch: cfg.run.episodes_per_epoch,
        horizon_steps: cfg.run.horizon_steps,
    };
    let every = cfg.run.checkpoint_every;
    let mut checkpoints = Vec::new();
    let trace_from = (cfg.run.trace && cfg.run.epochs > 0).then(|| cfg.run.epochs - 1);
    let fit = fit(&mut env, agent.as_mut(), seed, schedule, |rec, _, agent| {
        if every > 0 && (rec.epoch + 1) % every == 0 {
            checkpoints.push((rec.epoch + 1, Checkpoint::from_store(alg, enc, agent.store()).to_bytes()));
        }
    })?;
    let trace = match trace_from {
        Some(_) if fit.diverged.is_none() => {
            // Replay the final episode's seed greedily with the trained policy.
            env.start_trace();
            let index = (cfg.run.epochs * cfg.run.episodes_per_epoch - 1) as u64;
            run_episode(&mut env, agent.as_mut(), Mode::Eval, episode_seed(seed, Stream::Sim, index), cfg.run.horizon_steps)?;
            env.take_trace()
        }
        _ => None,
    };
    Ok(RunResult {
        fingerprint: fingerprint(cfg),
        seed,
        scenario: cfg.scenario.scenario,
        algorithm: cfg.algorithm.algorithm,
        encoder: cfg.encoder.kind,
        records: fit.records,
        wall_clock_s: start.elapsed().as_secs_f64(),
        diverged: fit.diverged,
        checkpoints,
        final_checkpoint: Checkpoint::from_store(alg, enc, agent.store()).to_bytes(),
        trace,
    })
}

/// Greedy evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    /// Set when there were no episodes; all statistics are then absent.
    pub no_data: bool,
    pub mean_reward: Option<f64>,
    pub std_reward: Option<f64>,
    /// Collisions per episode.
    pub collision_rate: Option<f64>,
    /// Share of AVs leaving the road that used their own ramp (highway only).
    pub ramp_exit_success_rate: Option<f64>,
    pub mean_speed: Option<f64>,
}

/// Rolls out the checkpointed policy without exploration for `episodes`
/// episodes whose seeds come from the evaluation stream of `seed`.
pub fn evaluate(checkpoint: &Checkpoint, cfg: &ExperimentConfig, episodes: usize, seed: u64) -> Result<EvalSummary, RunError> {
    checkpoint.check_ids(cfg.algorithm.algorithm.as_str(), cfg.encoder.kind.as_str())?;
    let mut env = TrafficEnv::new(cfg.scenario.clone(), cfg.reward);
    let mut agent = build_agent(&cfg.algorithm, &cfg.encoder, env.spec(), seed)?;
    checkpoint.load_into(agent.store_mut())?;
    let mut stats = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let s = run_episode(
            &mut env,
            agent.as_mut(),
            Mode::Eval,
            episode_seed(seed, Stream::Eval, i as u64),
            cfg.run.horizon_steps,
        )?;
        stats.push(s);
    }
    Ok(summarize(&stats, cfg.scenario.scenario))
}

pub fn summarize(stats: &[EpisodeStats], scenario: Scenario) -> EvalSummary {
    if stats.is_empty() {
        return EvalSummary {
            episodes: 0,
            no_data: true,
            mean_reward: None,
            std_reward: None,
            collision_rate: None,
            ramp_exit_success_rate: None,
            mean_speed: None,
        };
    }
    let n = stats.len() as f64;
    let mean = stats.iter().map(|s| s.reward).sum::<f64>() / n;
    let var = stats.iter().map(|s| (s.reward - mean).powi(2)).sum::<f64>() / n;
    let ramp: usize = stats.iter().map(|s| s.info.ramp_exits).sum();
    let left: usize = stats.iter().map(|s| s.info.ramp_exits + s.info.failed_exits).sum();
    EvalSummary {
        episodes: stats.len(),
        no_data: false,
        mean_reward: Some(mean),
        std_reward: Some(var.sqrt()),
        collision_rate: Some(stats.iter().map(|s| s.info.collisions as f64).sum::<f64>() / n),
        ramp_exit_success_rate: (scenario == Scenario::HighwayRamping && left > 0).then(|| ramp as f64 / left as f64),
        mean_speed: Some(stats.iter().map(EpisodeStats::mean_speed).sum::<f64>() / n),
    }
}
