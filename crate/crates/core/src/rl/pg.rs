use rand::seq::SliceRandom;

use crate::graph::GraphObservation;
use crate::nn::{pool_global, Encoder, EncoderSpec, Grad, Mlp, ObsBatch};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::tensor::{Optimizer, ParamId, ParamStore, Tape, Tensor, Var};

use super::policy::{argmax, gaussian_sample, sample_categorical, squash_mean};
use super::targets::{discounted_returns, gae, n_step_returns, normalize, one_step_targets};
use super::{check_loss, ActionSpace, Actions, Agent, AgentError, AlgoConfig, Algorithm, EnvSpec, Mode, Transition};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Stochastic policy plus, for critic methods, a centralized state value
/// read from the pooled embedding. Encoder shared by both heads.
#[derive(Debug, Clone)]
pub(crate) struct ActorCritic {
    encoder: Encoder,
    policy: Mlp,
    log_std: Option<ParamId>,
    value: Option<Mlp>,
    space: ActionSpace,
}

/// Per-row policy quantities of one forward pass.
pub(crate) struct PolicyEval<'t> {
    /// Log-probability of the taken action, `rows × 1`.
    pub log_prob: Var<'t>,
    /// Entropy, `rows × 1`.
    pub entropy: Var<'t>,
    /// `B × 1` state values when the network has a critic.
    pub value: Option<Var<'t>>,
}

impl ActorCritic {
    fn new(store: &mut ParamStore, spec: &EncoderSpec, env: EnvSpec, hidden: usize, critic: bool, rng: &mut StreamRng) -> Self {
        let encoder = Encoder::new(store, "encoder", spec, env.feature_width, rng);
        let width = spec.output_width(env.feature_width);
        let (out, log_std) = match env.action_space {
            ActionSpace::Discrete { n } => (n, None),
            ActionSpace::Continuous { high, .. } => {
                let init = (0.5 * high.abs().max(1e-3)).ln();
                (1, Some(store.insert("policy.log_std", Tensor::scalar(init))))
            }
        };
        let policy = Mlp::new(store, "policy", &[width, hidden, out], rng);
        policy.scale_output(store, 0.01);
        let value = critic.then(|| Mlp::new(store, "value", &[width, hidden, 1], rng));
        Self {
            encoder,
            policy,
            log_std,
            value,
            space: env.action_space,
        }
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.policy.params());
        p.extend(self.log_std);
        if let Some(v) = &self.value {
            p.extend(v.params());
        }
        p
    }

    /// Raw policy output: logits (`rows × n`) or squashed means (`rows × 1`).
    fn head<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &ObsBatch, grad: Grad) -> Result<(Var<'t>, Var<'t>), AgentError> {
        let z = self.encoder.forward(tape, store, batch, grad)?;
        let out = self.policy.forward(tape, store, z, grad)?;
        let out = match self.space {
            ActionSpace::Discrete { .. } => out.log_softmax(),
            ActionSpace::Continuous { low, high } => squash_mean(out, low, high),
        };
        Ok((z, out))
    }

    pub(crate) fn evaluate<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        batch: &ObsBatch,
        actions: &Actions,
        grad: Grad,
    ) -> Result<PolicyEval<'t>, AgentError> {
        let (z, out) = self.head(tape, store, batch, grad)?;
        let rows = batch.rows();
        let (log_prob, entropy) = match actions {
            Actions::Discrete(a) => {
                let lp = out.gather_cols(a)?;
                let ent = out.exp().mul(out)?.sum_cols().neg();
                (lp, ent)
            }
            Actions::Continuous(a) => {
                let ls = tape
                    .constant(&Tensor::zeros(rows, 1))
                    .add_row(grad.var(tape, store, self.log_std.expect("continuous head")))?;
                let dev = tape.constant_matrix(rows, 1, a.clone()).sub(out)?;
                let z = dev.mul(ls.neg().exp())?;
                let lp = z.square().scale(-0.5).sub(ls)?.add_scalar(-0.5 * LOG_2PI);
                let ent = ls.add_scalar(0.5 * (1.0 + LOG_2PI));
                (lp, ent)
            }
        };
        let value = match &self.value {
            Some(v) => Some(v.forward(tape, store, pool_global(z, batch)?, grad)?),
            None => None,
        };
        Ok(PolicyEval { log_prob, entropy, value })
    }

    fn state_values(&self, store: &ParamStore, batch: &ObsBatch) -> Result<Vec<f64>, AgentError> {
        let v = self.value.as_ref().expect("critic");
        let tape = Tape::new();
        let z = self.encoder.forward(&tape, store, batch, Grad::Frozen)?;
        Ok(v.forward(&tape, store, pool_global(z, batch)?, Grad::Frozen)?.to_vec())
    }
}

/// REINFORCE, actor-critic, A2C and PPO with a shared per-slot policy.
pub struct PolicyGradientAgent {
    cfg: AlgoConfig,
    space: ActionSpace,
    store: ParamStore,
    net: ActorCritic,
    optimizer: Optimizer,
    rollout: Vec<Transition>,
    explore_rng: StreamRng,
    shuffle_rng: StreamRng,
    last_loss: Option<f64>,
}

/// Per-sample targets of one rollout.
struct RolloutTargets {
    advantages: Vec<f64>,
    value_targets: Option<Vec<f64>>,
}

impl PolicyGradientAgent {
    pub fn new(cfg: AlgoConfig, spec: &EncoderSpec, env: EnvSpec, seed: u64) -> Self {
        let mut init = stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let critic = cfg.algorithm != Algorithm::Reinforce;
        let net = ActorCritic::new(&mut store, spec, env, cfg.head_hidden, critic, &mut init);
        let optimizer = Optimizer::new(cfg.optimizer_config(cfg.learning_rate), &store, net.params());
        Self {
            cfg,
            space: env.action_space,
            store,
            net,
            optimizer,
            rollout: Vec::new(),
            explore_rng: stream_rng(seed, Stream::Exploration),
            shuffle_rng: stream_rng(seed, Stream::Replay),
            last_loss: None,
        }
    }

    /// Per-slot action log-probabilities (discrete) or Gaussian means.
    pub fn policy_output(&self, obs: &GraphObservation) -> Result<Tensor, AgentError> {
        let tape = Tape::new();
        let (_, out) = self.net.head(&tape, &self.store, &ObsBatch::new([obs]), Grad::Frozen)?;
        Ok(out.value())
    }

    pub fn std(&self) -> Option<f64> {
        self.net.log_std.map(|id| self.store.get(id).item().exp())
    }

    /// State value of one observation.
    pub fn value(&self, obs: &GraphObservation) -> Result<f64, AgentError> {
        Ok(self.net.state_values(&self.store, &ObsBatch::new([obs]))?[0])
    }

    fn targets(&self, last_obs: &GraphObservation) -> Result<RolloutTargets, AgentError> {
        let rewards: Vec<f64> = self.rollout.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = self.rollout.iter().map(|t| t.done).collect();
        let gamma = self.cfg.gamma;
        if self.cfg.algorithm == Algorithm::Reinforce {
            let g = discounted_returns(&rewards, gamma);
            let advantages = if self.cfg.normalize_returns { normalize(&g) } else { g };
            return Ok(RolloutTargets {
                advantages,
                value_targets: None,
            });
        }
        let obs = ObsBatch::new(self.rollout.iter().map(|t| t.obs.as_ref()).chain([last_obs]));
        let mut values = self.net.state_values(&self.store, &obs)?;
        let tail = values.pop().expect("tail value");
        let (advantages, value_targets) = match self.cfg.algorithm {
            Algorithm::Ac => {
                let next: Vec<f64> = values[1..].iter().copied().chain([tail]).collect();
                let y = one_step_targets(&rewards, &next, &dones, gamma);
                let adv = y.iter().zip(&values).map(|(y, v)| y - v).collect();
                (adv, y)
            }
            Algorithm::A2c => {
                let g = n_step_returns(&rewards, &dones, tail, gamma);
                let adv: Vec<f64> = g.iter().zip(&values).map(|(g, v)| g - v).collect();
                let mean = adv.iter().sum::<f64>() / adv.len() as f64;
                (adv.iter().map(|a| a - mean).collect(), g)
            }
            _ => {
                let adv = gae(&rewards, &values, tail, &dones, gamma, self.cfg.gae_lambda);
                let ret = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
                (normalize(&adv), ret)
            }
        };
        Ok(RolloutTargets {
            advantages,
            value_targets: Some(value_targets),
        })
    }

    /// Loss over rollout samples with per-sample advantages and optional
    /// value targets. `old_log_prob` (one per row) switches on the clipped
    /// surrogate.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape,
        samples: &[&Transition],
        advantages: &[f64],
        value_targets: Option<&[f64]>,
        old_log_prob: Option<&[f64]>,
    ) -> Result<Var<'t>, AgentError> {
        let batch = ObsBatch::new(samples.iter().map(|t| t.obs.as_ref()));
        let actions = concat_actions(samples);
        let eval = self.net.evaluate(tape, &self.store, &batch, &actions, Grad::Track)?;
        let slots = batch.slots;
        let counts = batch.av_counts();
        let acting = counts.iter().filter(|&&c| c > 0.0).count().max(1) as f64;
        let row_weights: Vec<f64> = batch
            .av_mask
            .iter()
            .enumerate()
            .map(|(r, &m)| if m > 0.0 { 1.0 / counts[r / slots] / acting } else { 0.0 })
            .collect();
        let row_adv: Vec<f64> = (0..batch.rows()).map(|r| advantages[r / slots] * row_weights[r]).collect();
        let policy_loss = match old_log_prob {
            None => eval.log_prob.mul_const(&row_adv)?.sum().neg(),
            Some(old) => {
                let eps = self.cfg.ppo_clip;
                let ratio = eval.log_prob.sub(tape.constant_matrix(old.len(), 1, old.to_vec()))?.exp();
                let unclipped = ratio.mul_const(&row_adv)?;
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps).mul_const(&row_adv)?;
                unclipped.minimum(clipped)?.sum().neg()
            }
        };
        let entropy = eval.entropy.mul_const(&row_weights)?.sum();
        let mut loss = policy_loss.sub(entropy.scale(self.cfg.entropy_coef))?;
        if let (Some(v), Some(targets)) = (eval.value, value_targets) {
            let diff = v.sub(tape.constant_matrix(targets.len(), 1, targets.to_vec()))?;
            loss = loss.add(diff.square().mean().scale(self.cfg.value_coef))?;
        }
        Ok(loss)
    }

    fn step(&mut self, loss_value: f64, tape: &Tape, loss: Var<'_>) -> Result<(), AgentError> {
        check_loss(loss_value, "policy")?;
        tape.backward(loss, &mut self.store);
        self.optimizer.step(&mut self.store)?;
        self.last_loss = Some(loss_value);
        Ok(())
    }

    fn update(&mut self, last_obs: &GraphObservation) -> Result<(), AgentError> {
        if self.rollout.is_empty() {
            return Ok(());
        }
        let t = self.targets(last_obs)?;
        let rollout = std::mem::take(&mut self.rollout);
        self.update_on(&rollout, &t)
    }

    fn update_on(&mut self, rollout: &[Transition], t: &RolloutTargets) -> Result<(), AgentError> {
        if self.cfg.algorithm != Algorithm::Ppo {
            let samples: Vec<&Transition> = rollout.iter().collect();
            let tape = Tape::new();
            let loss = self.loss(&tape, &samples, &t.advantages, t.value_targets.as_deref(), None)?;
            return self.step(loss.item(), &tape, loss);
        }
        let all: Vec<&Transition> = rollout.iter().collect();
        let old = {
            let tape = Tape::new();
            let batch = ObsBatch::new(all.iter().map(|t| t.obs.as_ref()));
            let eval = self.net.evaluate(&tape, &self.store, &batch, &concat_actions(&all), Grad::Frozen)?;
            eval.log_prob.to_vec()
        };
        let slots = all[0].mask.len();
        let mut order: Vec<usize> = (0..rollout.len()).collect();
        let value_targets = t.value_targets.as_ref().expect("critic targets");
        for _ in 0..self.cfg.ppo_epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(self.cfg.minibatch_size) {
                let samples: Vec<&Transition> = chunk.iter().map(|&i| &rollout[i]).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| t.advantages[i]).collect();
                let vt: Vec<f64> = chunk.iter().map(|&i| value_targets[i]).collect();
                let old_lp: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&i| old[i * slots..(i + 1) * slots].iter().copied())
                    .collect();
                let tape = Tape::new();
                let loss = self.loss(&tape, &samples, &adv, Some(&vt), Some(&old_lp))?;
                self.step(loss.item(), &tape, loss)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn concat_actions(samples: &[&Transition]) -> Actions {
    match &samples[0].actions {
        Actions::Discrete(_) => Actions::Discrete(samples.iter().flat_map(|t| t.actions.discrete().iter().copied()).collect()),
        Actions::Continuous(_) => {
            Actions::Continuous(samples.iter().flat_map(|t| t.actions.continuous().iter().copied()).collect())
        }
    }
}

impl Agent for PolicyGradientAgent {
    fn algorithm(&self) -> Algorithm {
        self.cfg.algorithm
    }

    fn act(&mut self, obs: &GraphObservation, mode: Mode) -> Result<Actions, AgentError> {
        let out = self.policy_output(obs)?;
        let acting = |s: usize| s >= obs.first_av_slot && obs.occupancy[s];
        Ok(match self.space {
            ActionSpace::Discrete { .. } => Actions::Discrete(
                (0..obs.slot_count())
                    .map(|s| match (acting(s), mode) {
                        (false, _) => 1,
                        (true, Mode::Train) => sample_categorical(out.row(s), &mut self.explore_rng),
                        (true, Mode::Eval) => argmax(out.row(s)),
                    })
                    .collect(),
            ),
            ActionSpace::Continuous { low, high } => {
                let std = self.std().expect("continuous head");
                Actions::Continuous(
                    (0..obs.slot_count())
                        .map(|s| match (acting(s), mode) {
                            (false, _) => 0.0,
                            (true, Mode::Train) => gaussian_sample(out.get(s, 0), std, &mut self.explore_rng).clamp(low, high),
                            (true, Mode::Eval) => out.get(s, 0),
                        })
                        .collect(),
                )
            }
        })
    }

    fn observe(&mut self, transition: Transition) -> Result<(), AgentError> {
        let next = transition.next_obs.clone();
        self.rollout.push(transition);
        let on_rollout = matches!(self.cfg.algorithm, Algorithm::Ac | Algorithm::A2c | Algorithm::Ppo);
        if on_rollout && self.rollout.len() >= self.cfg.rollout_len {
            self.update(&next)?;
        }
        Ok(())
    }

    fn end_episode(&mut self, last_obs: &GraphObservation) -> Result<(), AgentError> {
        self.update(last_obs)
    }

    fn set_progress(&mut self, _fraction: f64) {}

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }
}
