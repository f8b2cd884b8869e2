use rand::Rng;

use crate::graph::GraphObservation;
use crate::nn::{Encoder, EncoderSpec, Grad, Mlp, ObsBatch};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::tensor::{Optimizer, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

use super::policy::{dueling_combine, epsilon_greedy, linear_schedule};
use super::replay::{PrioritizedReplay, ReplayBuffer};
use super::targets::{double_dqn_targets, dqn_targets};
use super::{check_loss, ActionSpace, Actions, Agent, AgentError, AlgoConfig, Algorithm, EnvSpec, Mode, Transition};

/// Per-slot action-value network: encoder followed by a shared head.
#[derive(Debug, Clone)]
pub(crate) struct QNet {
    encoder: Encoder,
    head: QHead,
}

#[derive(Debug, Clone)]
enum QHead {
    Plain(Mlp),
    Dueling { value: Mlp, advantage: Mlp },
}

impl QNet {
    pub(crate) fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        spec: &EncoderSpec,
        env: EnvSpec,
        hidden: usize,
        dueling: bool,
        rng: &mut R,
    ) -> Self {
        let ActionSpace::Discrete { n } = env.action_space else {
            panic!("Q networks need a discrete action space");
        };
        let encoder = Encoder::new(store, &format!("{prefix}encoder"), spec, env.feature_width, rng);
        let width = spec.output_width(env.feature_width);
        let head = if dueling {
            QHead::Dueling {
                value: Mlp::new(store, &format!("{prefix}q.value"), &[width, hidden, 1], rng),
                advantage: Mlp::new(store, &format!("{prefix}q.advantage"), &[width, hidden, n], rng),
            }
        } else {
            QHead::Plain(Mlp::new(store, &format!("{prefix}q"), &[width, hidden, n], rng))
        };
        Self { encoder, head }
    }

    pub(crate) fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &ObsBatch, grad: Grad) -> Result<Var<'t>, TensorError> {
        let z = self.encoder.forward(tape, store, batch, grad)?;
        match &self.head {
            QHead::Plain(mlp) => mlp.forward(tape, store, z, grad),
            QHead::Dueling { value, advantage } => {
                let v = value.forward(tape, store, z, grad)?;
                let a = advantage.forward(tape, store, z, grad)?;
                dueling_combine(v, a)
            }
        }
    }

    pub(crate) fn values(&self, store: &ParamStore, batch: &ObsBatch) -> Tensor {
        let tape = Tape::new();
        self.forward(&tape, store, batch, Grad::Frozen).expect("Q network shapes").value()
    }

    pub(crate) fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        match &self.head {
            QHead::Plain(m) => p.extend(m.params()),
            QHead::Dueling { value, advantage } => {
                p.extend(value.params());
                p.extend(advantage.params());
            }
        }
        p
    }
}

#[derive(Debug, Clone)]
enum Replay {
    Uniform(ReplayBuffer<Transition>),
    Prioritized(PrioritizedReplay<Transition>),
}

impl Replay {
    fn len(&self) -> usize {
        match self {
            Replay::Uniform(b) => b.len(),
            Replay::Prioritized(b) => b.len(),
        }
    }

    fn get(&self, i: usize) -> &Transition {
        match self {
            Replay::Uniform(b) => b.get(i),
            Replay::Prioritized(b) => b.get(i),
        }
    }
}

/// DQN, Double DQN, Dueling DQN and DQN with prioritized replay.
pub struct QAgent {
    cfg: AlgoConfig,
    store: ParamStore,
    online: QNet,
    target: QNet,
    optimizer: Optimizer,
    replay: Replay,
    explore_rng: StreamRng,
    replay_rng: StreamRng,
    steps: usize,
    updates: usize,
    progress: f64,
    last_loss: Option<f64>,
}

impl QAgent {
    pub fn new(cfg: AlgoConfig, spec: &EncoderSpec, env: EnvSpec, seed: u64) -> Self {
        let mut init = stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let dueling = cfg.algorithm == Algorithm::DuelingDqn;
        let online = QNet::new(&mut store, "", spec, env, cfg.head_hidden, dueling, &mut init);
        let target = QNet::new(&mut store, "target.", spec, env, cfg.head_hidden, dueling, &mut init);
        for (s, d) in online.params().into_iter().zip(target.params()) {
            store.copy_values(s, d);
        }
        let optimizer = Optimizer::new(cfg.optimizer_config(cfg.learning_rate), &store, online.params());
        let replay = if cfg.algorithm == Algorithm::DqnPer {
            Replay::Prioritized(PrioritizedReplay::new(cfg.replay_capacity, cfg.per_alpha, cfg.per_epsilon))
        } else {
            Replay::Uniform(ReplayBuffer::new(cfg.replay_capacity))
        };
        Self {
            cfg,
            store,
            online,
            target,
            optimizer,
            replay,
            explore_rng: stream_rng(seed, Stream::Exploration),
            replay_rng: stream_rng(seed, Stream::Replay),
            steps: 0,
            updates: 0,
            progress: 0.0,
            last_loss: None,
        }
    }

    pub fn epsilon(&self) -> f64 {
        linear_schedule(self.cfg.epsilon_start, self.cfg.epsilon_end, self.cfg.exploration_fraction, self.progress)
    }

    /// Online action values of one observation, `S × n`.
    pub fn q_values(&self, obs: &GraphObservation) -> Tensor {
        self.online.values(&self.store, &ObsBatch::new([obs]))
    }

    pub fn target_params(&self) -> Vec<ParamId> {
        self.target.params()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Joint loss of a batch of transitions with importance weights `isw`.
    /// Returns the loss and the per-sample mean absolute TD error.
    pub fn loss<'t>(&self, tape: &'t Tape, batch: &[&Transition], isw: &[f64]) -> Result<(Var<'t>, Vec<f64>), AgentError> {
        let obs = ObsBatch::new(batch.iter().map(|t| t.obs.as_ref()));
        let next = ObsBatch::new(batch.iter().map(|t| t.next_obs.as_ref()));
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let continuing: Vec<f64> = batch.iter().flat_map(|t| t.continuing.iter().copied()).collect();
        let next_target = self.target.values(&self.store, &next);
        let y = if matches!(self.cfg.algorithm, Algorithm::DoubleDqn) {
            let next_online = self.online.values(&self.store, &next);
            double_dqn_targets(&rewards, &continuing, &next_online, &next_target, self.cfg.gamma)
        } else {
            dqn_targets(&rewards, &continuing, &next_target, self.cfg.gamma)
        };
        let actions: Vec<usize> = batch.iter().flat_map(|t| t.actions.discrete().iter().copied()).collect();
        let q = self.online.forward(tape, &self.store, &obs, Grad::Track)?;
        let diff = q.gather_cols(&actions)?.sub(tape.constant_matrix(y.len(), 1, y))?;
        let slots = obs.slots;
        let counts = obs.av_counts();
        let norm: f64 = counts.iter().zip(isw).filter(|(c, _)| **c > 0.0).map(|(_, w)| w).sum();
        let weights: Vec<f64> = obs
            .av_mask
            .iter()
            .enumerate()
            .map(|(row, &m)| {
                let b = row / slots;
                if m > 0.0 {
                    isw[b] / counts[b] / norm
                } else {
                    0.0
                }
            })
            .collect();
        let d = diff.to_vec();
        let td: Vec<f64> = (0..batch.len())
            .map(|b| {
                let rows = b * slots..(b + 1) * slots;
                let s: f64 = rows.map(|r| obs.av_mask[r] * d[r].abs()).sum();
                if counts[b] > 0.0 {
                    s / counts[b]
                } else {
                    0.0
                }
            })
            .collect();
        Ok((diff.square().mul_const(&weights)?.sum(), td))
    }

    fn update(&mut self) -> Result<(), AgentError> {
        let batch_size = self.cfg.batch_size;
        let (indices, isw) = match &self.replay {
            Replay::Uniform(b) => (b.sample_indices(batch_size, &mut self.replay_rng), vec![1.0; batch_size]),
            Replay::Prioritized(b) => {
                let beta = self.cfg.per_beta + self.progress * (1.0 - self.cfg.per_beta);
                b.sample(batch_size, beta, &mut self.replay_rng)
            }
        };
        let batch: Vec<&Transition> = indices.iter().map(|&i| self.replay.get(i)).collect();
        let tape = Tape::new();
        let (loss, td) = self.loss(&tape, &batch, &isw)?;
        let value = loss.item();
        check_loss(value, "Q")?;
        tape.backward(loss, &mut self.store);
        self.optimizer.step(&mut self.store)?;
        if let Replay::Prioritized(b) = &mut self.replay {
            b.update_from_errors(&indices, &td);
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.target_update_period) {
            for (s, d) in self.online.params().into_iter().zip(self.target.params()) {
                self.store.copy_values(s, d);
            }
        }
        self.last_loss = Some(value);
        Ok(())
    }
}

impl Agent for QAgent {
    fn algorithm(&self) -> Algorithm {
        self.cfg.algorithm
    }

    fn act(&mut self, obs: &GraphObservation, mode: Mode) -> Result<Actions, AgentError> {
        let q = self.q_values(obs);
        let eps = match mode {
            Mode::Train => self.epsilon(),
            Mode::Eval => 0.0,
        };
        let actions = (0..obs.slot_count())
            .map(|s| {
                if s >= obs.first_av_slot && obs.occupancy[s] {
                    epsilon_greedy(q.row(s), eps, &mut self.explore_rng)
                } else {
                    1
                }
            })
            .collect();
        Ok(Actions::Discrete(actions))
    }

    fn observe(&mut self, transition: Transition) -> Result<(), AgentError> {
        self.steps += 1;
        if transition.has_actors() {
            match &mut self.replay {
                Replay::Uniform(b) => {
                    b.push(transition);
                }
                Replay::Prioritized(b) => {
                    b.push(transition);
                }
            }
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

    fn set_progress(&mut self, fraction: f64) {
        self.progress = fraction.clamp(0.0, 1.0);
    }

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
