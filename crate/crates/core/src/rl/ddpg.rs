use rand_distr::{Distribution, StandardNormal};

use crate::graph::GraphObservation;
use crate::nn::{Encoder, EncoderSpec, Grad, Mlp, ObsBatch};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::tensor::{Optimizer, ParamId, ParamStore, Tape, Var};

use super::policy::{noisy_action, squash_mean};
use super::replay::ReplayBuffer;
use super::{check_loss, ActionSpace, Actions, Agent, AgentError, AlgoConfig, Algorithm, EnvSpec, Mode, Transition};

#[derive(Debug, Clone)]
struct Actor {
    encoder: Encoder,
    head: Mlp,
}

#[derive(Debug, Clone)]
struct Critic {
    encoder: Encoder,
    head: Mlp,
}

impl Actor {
    fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }
}

impl Critic {
    fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }
}

#[derive(Debug, Clone)]
struct Networks {
    actor: Actor,
    critics: Vec<Critic>,
}

impl Networks {
    fn new(store: &mut ParamStore, prefix: &str, spec: &EncoderSpec, env: EnvSpec, hidden: usize, twins: usize, rng: &mut StreamRng) -> Self {
        let width = spec.output_width(env.feature_width);
        let actor = Actor {
            encoder: Encoder::new(store, &format!("{prefix}encoder"), spec, env.feature_width, rng),
            head: Mlp::new(store, &format!("{prefix}actor"), &[width, hidden, 1], rng),
        };
        let critics = (1..=twins)
            .map(|k| Critic {
                encoder: Encoder::new(store, &format!("{prefix}critic{k}.encoder"), spec, env.feature_width, rng),
                head: Mlp::new(store, &format!("{prefix}critic{k}.q"), &[width + 1, hidden, 1], rng),
            })
            .collect();
        Self { actor, critics }
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.actor.params();
        for c in &self.critics {
            p.extend(c.params());
        }
        p
    }
}

/// DDPG and TD3 with per-slot deterministic actors and per-slot critics
/// `Q(z_i, a_i)`.
pub struct DeterministicAgent {
    cfg: AlgoConfig,
    low: f64,
    high: f64,
    store: ParamStore,
    online: Networks,
    target: Networks,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    replay: ReplayBuffer<Transition>,
    explore_rng: StreamRng,
    replay_rng: StreamRng,
    steps: usize,
    updates: usize,
    last_loss: Option<f64>,
}

impl DeterministicAgent {
    pub fn new(cfg: AlgoConfig, spec: &EncoderSpec, env: EnvSpec, seed: u64) -> Self {
        let ActionSpace::Continuous { low, high } = env.action_space else {
            panic!("deterministic policies need a continuous action space");
        };
        let twins = if cfg.algorithm == Algorithm::Td3 { 2 } else { 1 };
        let mut init = stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let online = Networks::new(&mut store, "", spec, env, cfg.head_hidden, twins, &mut init);
        online.actor.head.scale_output(&mut store, 0.01);
        let target = Networks::new(&mut store, "target.", spec, env, cfg.head_hidden, twins, &mut init);
        for (s, d) in online.params().into_iter().zip(target.params()) {
            store.copy_values(s, d);
        }
        let actor_opt = Optimizer::new(cfg.optimizer_config(cfg.learning_rate), &store, online.actor.params());
        let critic_params = online.critics.iter().flat_map(|c| c.params()).collect();
        let critic_opt = Optimizer::new(cfg.optimizer_config(cfg.critic_learning_rate), &store, critic_params);
        Self {
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cfg,
            low,
            high,
            store,
            online,
            target,
            actor_opt,
            critic_opt,
            explore_rng: stream_rng(seed, Stream::Exploration),
            replay_rng: stream_rng(seed, Stream::Replay),
            steps: 0,
            updates: 0,
            last_loss: None,
        }
    }

    fn actor_forward<'t>(&self, tape: &'t Tape, nets: &Networks, batch: &ObsBatch, grad: Grad) -> Result<Var<'t>, AgentError> {
        let z = nets.actor.encoder.forward(tape, &self.store, batch, grad)?;
        let raw = nets.actor.head.forward(tape, &self.store, z, grad)?;
        Ok(squash_mean(raw, self.low, self.high))
    }

    fn critic_forward<'t>(
        &self,
        tape: &'t Tape,
        critic: &Critic,
        batch: &ObsBatch,
        action: Var<'t>,
        grad: Grad,
    ) -> Result<Var<'t>, AgentError> {
        let z = critic.encoder.forward(tape, &self.store, batch, grad)?;
        let half = 0.5 * (self.high - self.low);
        let mid = 0.5 * (self.high + self.low);
        let a = action.add_scalar(-mid).scale(1.0 / half);
        Ok(critic.head.forward(tape, &self.store, z.concat_cols(a)?, grad)?)
    }

    /// Deterministic per-slot actions of the online actor.
    pub fn actor_output(&self, obs: &GraphObservation) -> Result<Vec<f64>, AgentError> {
        let tape = Tape::new();
        Ok(self.actor_forward(&tape, &self.online, &ObsBatch::new([obs]), Grad::Frozen)?.to_vec())
    }

    /// Online critic values of one observation with the given actions.
    pub fn critic_output(&self, obs: &GraphObservation, actions: &[f64], critic: usize) -> Result<Vec<f64>, AgentError> {
        let tape = Tape::new();
        let a = tape.constant_matrix(actions.len(), 1, actions.to_vec());
        let q = self.critic_forward(&tape, &self.online.critics[critic], &ObsBatch::new([obs]), a, Grad::Frozen)?;
        Ok(q.to_vec())
    }

    pub fn actor_params(&self) -> Vec<ParamId> {
        self.online.actor.params()
    }

    pub fn target_params(&self) -> Vec<ParamId> {
        self.target.params()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    fn row_weights(batch: &ObsBatch) -> Vec<f64> {
        let counts = batch.av_counts();
        let acting = counts.iter().filter(|&&c| c > 0.0).count().max(1) as f64;
        batch
            .av_mask
            .iter()
            .enumerate()
            .map(|(r, &m)| if m > 0.0 { 1.0 / counts[r / batch.slots] / acting } else { 0.0 })
            .collect()
    }

    /// Bootstrapped critic targets for a batch. `noise` holds one
    /// pre-drawn standard normal per row for target smoothing (TD3).
    pub fn critic_targets(&self, samples: &[&Transition], noise: Option<&[f64]>) -> Result<Vec<f64>, AgentError> {
        let next = ObsBatch::new(samples.iter().map(|t| t.next_obs.as_ref()));
        let tape = Tape::new();
        let mut a = self.actor_forward(&tape, &self.target, &next, Grad::Frozen)?.to_vec();
        if let Some(n) = noise {
            let c = self.cfg.td3_noise_clip;
            for (x, e) in a.iter_mut().zip(n) {
                *x = (*x + (self.cfg.td3_target_noise * e).clamp(-c, c)).clamp(self.low, self.high);
            }
        }
        let a = tape.constant_matrix(a.len(), 1, a);
        let mut q: Option<Vec<f64>> = None;
        for critic in &self.target.critics {
            let v = self.critic_forward(&tape, critic, &next, a, Grad::Frozen)?.to_vec();
            q = Some(match q {
                None => v,
                Some(prev) => prev.iter().zip(&v).map(|(x, y)| x.min(*y)).collect(),
            });
        }
        let q = q.expect("at least one critic");
        let slots = next.slots;
        Ok((0..q.len())
            .map(|r| {
                let t = samples[r / slots];
                t.reward + self.cfg.gamma * t.continuing[r % slots] * q[r]
            })
            .collect())
    }

    pub fn critic_loss<'t>(&self, tape: &'t Tape, samples: &[&Transition], targets: &[f64]) -> Result<Var<'t>, AgentError> {
        let batch = ObsBatch::new(samples.iter().map(|t| t.obs.as_ref()));
        let w = Self::row_weights(&batch);
        let actions: Vec<f64> = samples.iter().flat_map(|t| t.actions.continuous().iter().copied()).collect();
        let a = tape.constant_matrix(actions.len(), 1, actions);
        let y = tape.constant_matrix(targets.len(), 1, targets.to_vec());
        let mut total: Option<Var<'t>> = None;
        for critic in &self.online.critics {
            let l = self
                .critic_forward(tape, critic, &batch, a, Grad::Track)?
                .sub(y)?
                .square()
                .mul_const(&w)?
                .sum();
            total = Some(match total {
                None => l,
                Some(t) => t.add(l)?,
            });
        }
        Ok(total.expect("at least one critic"))
    }

    pub fn actor_loss<'t>(&self, tape: &'t Tape, samples: &[&Transition]) -> Result<Var<'t>, AgentError> {
        let batch = ObsBatch::new(samples.iter().map(|t| t.obs.as_ref()));
        let w = Self::row_weights(&batch);
        let a = self.actor_forward(tape, &self.online, &batch, Grad::Track)?;
        let q = self.critic_forward(tape, &self.online.critics[0], &batch, a, Grad::Frozen)?;
        Ok(q.mul_const(&w)?.sum().neg())
    }

    /// Soft update `θ' ← τθ + (1 − τ)θ'` of every target network.
    pub fn soft_update_targets(&mut self, tau: f64) {
        for (s, d) in self.online.params().into_iter().zip(self.target.params()) {
            self.store.soft_update(s, d, tau);
        }
    }

    fn update(&mut self) -> Result<(), AgentError> {
        let indices = self.replay.sample_indices(self.cfg.batch_size, &mut self.replay_rng);
        let rows = self.cfg.batch_size * self.replay.get(indices[0]).mask.len();
        let noise: Option<Vec<f64>> = (self.cfg.algorithm == Algorithm::Td3)
            .then(|| (0..rows).map(|_| -> f64 { StandardNormal.sample(&mut self.replay_rng) }).collect());
        let samples: Vec<Transition> = indices.iter().map(|&i| self.replay.get(i).clone()).collect();
        let refs: Vec<&Transition> = samples.iter().collect();
        let y = self.critic_targets(&refs, noise.as_deref())?;
        let tape = Tape::new();
        let loss = self.critic_loss(&tape, &refs, &y)?;
        let value = loss.item();
        check_loss(value, "critic")?;
        tape.backward(loss, &mut self.store);
        self.critic_opt.step(&mut self.store)?;
        self.updates += 1;
        self.last_loss = Some(value);
        let delay = if self.cfg.algorithm == Algorithm::Td3 { self.cfg.td3_policy_delay } else { 1 };
        if self.updates.is_multiple_of(delay) {
            let tape = Tape::new();
            let loss = self.actor_loss(&tape, &refs)?;
            check_loss(loss.item(), "actor")?;
            tape.backward(loss, &mut self.store);
            self.actor_opt.step(&mut self.store)?;
            self.soft_update_targets(self.cfg.tau);
        }
        Ok(())
    }
}

impl Agent for DeterministicAgent {
    fn algorithm(&self) -> Algorithm {
        self.cfg.algorithm
    }

    fn act(&mut self, obs: &GraphObservation, mode: Mode) -> Result<Actions, AgentError> {
        let mu = self.actor_output(obs)?;
        let actions = (0..obs.slot_count())
            .map(|s| {
                if s < obs.first_av_slot || !obs.occupancy[s] {
                    0.0
                } else if mode == Mode::Train {
                    noisy_action(mu[s], self.cfg.action_noise, self.low, self.high, &mut self.explore_rng)
                } else {
                    mu[s].clamp(self.low, self.high)
                }
            })
            .collect();
        Ok(Actions::Continuous(actions))
    }

    fn observe(&mut self, transition: Transition) -> Result<(), AgentError> {
        self.steps += 1;
        if transition.has_actors() {
            self.replay.push(transition);
        }
        let ready = self.replay.len() >= self.cfg.learning_starts.max(self.cfg.batch_size);
        if ready && self.steps.is_multiple_of(self.cfg.train_freq) {
            self.update()?;
        }
        Ok(())
    }

    fn end_episode(&mut self, _last_obs: &GraphObservation) -> Result<(), AgentError> {
        Ok(())
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
