//! Deep reinforcement learning on graph observations.
//!
//! Every algorithm uses one policy head shared by all AV slots. The team
//! reward trains all slots and per-slot losses are averaged over the slots
//! that hold an alive AV.

mod config;
mod ddpg;
mod dqn;
mod pg;
mod policy;
mod replay;
mod targets;

pub use config::AlgoConfig;
pub use ddpg::DeterministicAgent;
pub use dqn::QAgent;
pub use pg::PolicyGradientAgent;
pub use policy::{
    argmax, clamp_action, dueling_combine, epsilon_greedy, gaussian_log_prob, gaussian_sample, linear_schedule,
    noisy_action, sample_categorical, squash_mean,
};
pub use replay::{PrioritizedReplay, ReplayBuffer, SumTree};
pub use targets::{
    discounted_returns, dqn_targets, double_dqn_targets, gae, n_step_returns, normalize, one_step_targets,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphObservation;
use crate::nn::EncoderSpec;
use crate::tensor::{OptimError, ParamStore, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqn,
    DoubleDqn,
    DuelingDqn,
    DqnPer,
    Reinforce,
    Ac,
    A2c,
    Ppo,
    Ddpg,
    Td3,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::Dqn,
        Algorithm::DoubleDqn,
        Algorithm::DuelingDqn,
        Algorithm::DqnPer,
        Algorithm::Reinforce,
        Algorithm::Ac,
        Algorithm::A2c,
        Algorithm::Ppo,
        Algorithm::Ddpg,
        Algorithm::Td3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::DoubleDqn => "double_dqn",
            Algorithm::DuelingDqn => "dueling_dqn",
            Algorithm::DqnPer => "dqn_per",
            Algorithm::Reinforce => "reinforce",
            Algorithm::Ac => "ac",
            Algorithm::A2c => "a2c",
            Algorithm::Ppo => "ppo",
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn is_value_based(self) -> bool {
        matches!(self, Algorithm::Dqn | Algorithm::DoubleDqn | Algorithm::DuelingDqn | Algorithm::DqnPer)
    }

    pub fn is_deterministic_policy(self) -> bool {
        matches!(self, Algorithm::Ddpg | Algorithm::Td3)
    }

    pub fn supports(self, space: ActionSpace) -> bool {
        match space {
            ActionSpace::Discrete { .. } => !self.is_deterministic_policy(),
            ActionSpace::Continuous { .. } => !self.is_value_based(),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { low: f64, high: f64 },
}

/// What an agent needs to know about its environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub slots: usize,
    pub feature_width: usize,
    pub action_space: ActionSpace,
}

/// One action per slot. Slots without an alive AV carry a placeholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Actions {
    Discrete(Vec<usize>),
    Continuous(Vec<f64>),
}

impl Actions {
    pub fn len(&self) -> usize {
        match self {
            Actions::Discrete(a) => a.len(),
            Actions::Continuous(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn discrete(&self) -> &[usize] {
        match self {
            Actions::Discrete(a) => a,
            Actions::Continuous(_) => panic!("expected discrete actions"),
        }
    }

    pub fn continuous(&self) -> &[f64] {
        match self {
            Actions::Continuous(a) => a,
            Actions::Discrete(_) => panic!("expected continuous actions"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One experience tuple.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Arc<GraphObservation>,
    pub actions: Actions,
    pub reward: f64,
    pub next_obs: Arc<GraphObservation>,
    /// Terminal state: no bootstrapping. Horizon truncation is not terminal.
    pub done: bool,
    /// 1 for slots that held an alive AV when acting.
    pub mask: Vec<f64>,
    /// 1 for acting slots whose vehicle is still in the same slot in
    /// `next_obs` and the transition is not terminal.
    pub continuing: Vec<f64>,
}

impl Transition {
    pub fn new(obs: Arc<GraphObservation>, actions: Actions, reward: f64, next_obs: Arc<GraphObservation>, done: bool) -> Self {
        let mask = obs.av_weights();
        let continuing = mask
            .iter()
            .enumerate()
            .map(|(s, &m)| {
                let same = obs.slot_to_vehicle.contains_key(&s) && obs.slot_to_vehicle.get(&s) == next_obs.slot_to_vehicle.get(&s);
                if m > 0.0 && same && !done {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            obs,
            actions,
            reward,
            next_obs,
            done,
            mask,
            continuing,
        }
    }

    pub fn has_actors(&self) -> bool {
        self.mask.iter().any(|&m| m > 0.0)
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("algorithm {algorithm} does not support {space:?}")]
    Unsupported { algorithm: Algorithm, space: ActionSpace },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<OptimError> for AgentError {
    fn from(e: OptimError) -> Self {
        AgentError::Diverged(e.to_string())
    }
}

pub(crate) fn check_loss(loss: f64, what: &str) -> Result<(), AgentError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(AgentError::Diverged(format!("{what} loss is {loss}")))
    }
}

/// A learning agent. The harness calls `act`, then `observe` with the
/// resulting transition, and `end_episode` when the horizon is reached.
pub trait Agent {
    fn algorithm(&self) -> Algorithm;

    fn act(&mut self, obs: &GraphObservation, mode: Mode) -> Result<Actions, AgentError>;

    /// Records a transition and runs whatever updates are due.
    fn observe(&mut self, transition: Transition) -> Result<(), AgentError>;

    /// Closes the current episode; `last_obs` is the state after the final step.
    fn end_episode(&mut self, last_obs: &GraphObservation) -> Result<(), AgentError>;

    /// Fraction of the training budget consumed, in `[0, 1]`.
    fn set_progress(&mut self, fraction: f64);

    fn store(&self) -> &ParamStore;

    fn store_mut(&mut self) -> &mut ParamStore;

    /// Loss of the most recent update, if any.
    fn last_loss(&self) -> Option<f64>;
}

/// Builds the agent for `cfg.algorithm`.
pub fn build_agent(cfg: &AlgoConfig, encoder: &EncoderSpec, env: EnvSpec, seed: u64) -> Result<Box<dyn Agent>, AgentError> {
    if !cfg.algorithm.supports(env.action_space) {
        return Err(AgentError::Unsupported {
            algorithm: cfg.algorithm,
            space: env.action_space,
        });
    }
    Ok(if cfg.algorithm.is_value_based() {
        Box::new(QAgent::new(cfg.clone(), encoder, env, seed))
    } else if cfg.algorithm.is_deterministic_policy() {
        Box::new(DeterministicAgent::new(cfg.clone(), encoder, env, seed))
    } else {
        Box::new(PolicyGradientAgent::new(cfg.clone(), encoder, env, seed))
    })
}
