use serde::{Deserialize, Serialize};

use crate::tensor::{OptimizerConfig, OptimizerKind};
use crate::validate::{ensure, Violation};

use super::Algorithm;

/// The `algorithm` configuration section. Keys irrelevant to the chosen
/// algorithm are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub optimizer: OptimizerKind,
    /// Q network, or actor for actor-critic methods.
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Hidden width of every policy/value head.
    pub head_hidden: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Transitions collected before off-policy updates begin.
    pub learning_starts: usize,
    /// Environment steps between off-policy updates.
    pub train_freq: usize,
    /// Updates between hard target copies (DQN family).
    pub target_update_period: usize,
    /// Soft target rate (DDPG, TD3).
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of training over which ε decays linearly.
    pub exploration_fraction: f64,
    pub per_alpha: f64,
    /// Importance exponent at the start of training; annealed to 1.
    pub per_beta: f64,
    pub per_epsilon: f64,
    /// Gaussian exploration noise std of deterministic policies.
    pub action_noise: f64,
    /// Steps per on-policy rollout (AC, A2C, PPO); episodes end rollouts too.
    pub rollout_len: usize,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Standardize REINFORCE returns per episode.
    pub normalize_returns: bool,
    pub td3_policy_delay: usize,
    pub td3_target_noise: f64,
    pub td3_noise_clip: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self::for_algorithm(Algorithm::Dqn)
    }
}

impl AlgoConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            gamma: 0.99,
            optimizer: OptimizerKind::Adam,
            learning_rate: if algorithm.is_value_based() { 1e-3 } else { 3e-4 },
            critic_learning_rate: 1e-3,
            max_grad_norm: 10.0,
            head_hidden: 32,
            batch_size: 64,
            replay_capacity: 20_000,
            learning_starts: 500,
            train_freq: 1,
            target_update_period: 200,
            tau: 0.005,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            exploration_fraction: 0.3,
            per_alpha: 0.6,
            per_beta: 0.4,
            per_epsilon: 1e-6,
            action_noise: 0.3,
            rollout_len: 256,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            minibatch_size: 64,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            normalize_returns: true,
            td3_policy_delay: 2,
            td3_target_noise: 0.2,
            td3_noise_clip: 0.5,
        }
    }

    pub fn optimizer_config(&self, learning_rate: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), Violation> {
        ensure(self.gamma > 0.0 && self.gamma <= 1.0, "gamma", "must be in (0, 1]")?;
        ensure(self.learning_rate > 0.0, "learning_rate", "must be positive")?;
        ensure(self.critic_learning_rate > 0.0, "critic_learning_rate", "must be positive")?;
        ensure(self.max_grad_norm >= 0.0, "max_grad_norm", "must be non-negative")?;
        ensure(self.head_hidden > 0, "head_hidden", "must be positive")?;
        ensure(self.batch_size > 0, "batch_size", "must be positive")?;
        ensure(self.replay_capacity >= self.batch_size, "replay_capacity", "must hold at least one batch")?;
        ensure(self.train_freq > 0, "train_freq", "must be positive")?;
        ensure(self.target_update_period > 0, "target_update_period", "must be positive")?;
        ensure(self.tau > 0.0 && self.tau <= 1.0, "tau", "must be in (0, 1]")?;
        ensure((0.0..=1.0).contains(&self.epsilon_start), "epsilon_start", "must be in [0, 1]")?;
        ensure((0.0..=1.0).contains(&self.epsilon_end), "epsilon_end", "must be in [0, 1]")?;
        ensure(
            self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0,
            "exploration_fraction",
            "must be in (0, 1]",
        )?;
        ensure(self.per_alpha >= 0.0, "per_alpha", "must be non-negative")?;
        ensure((0.0..=1.0).contains(&self.per_beta), "per_beta", "must be in [0, 1]")?;
        ensure(self.per_epsilon > 0.0, "per_epsilon", "must be positive")?;
        ensure(self.action_noise >= 0.0, "action_noise", "must be non-negative")?;
        ensure(self.rollout_len > 0, "rollout_len", "must be positive")?;
        ensure(self.ppo_clip > 0.0, "ppo_clip", "must be positive")?;
        ensure(self.ppo_epochs > 0, "ppo_epochs", "must be positive")?;
        ensure(self.minibatch_size > 0, "minibatch_size", "must be positive")?;
        ensure((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda", "must be in [0, 1]")?;
        ensure(self.entropy_coef >= 0.0, "entropy_coef", "must be non-negative")?;
        ensure(self.value_coef >= 0.0, "value_coef", "must be non-negative")?;
        ensure(self.td3_policy_delay > 0, "td3_policy_delay", "must be positive")?;
        ensure(self.td3_target_noise >= 0.0, "td3_target_noise", "must be non-negative")?;
        ensure(self.td3_noise_clip >= 0.0, "td3_noise_clip", "must be non-negative")
    }
}
