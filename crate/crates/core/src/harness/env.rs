use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::graph::{build_observation, feature_width, GraphObservation};
use crate::reward::{figure_eight_reward, highway_reward, slot_speeds, RewardConfig};
use crate::rl::{ActionSpace, Actions, EnvSpec};
use crate::rng::{stream_rng, Stream};
use crate::sim::{AvAction, LaneCommand, Scenario, ScenarioConfig, SimError, Simulator, TraceWriter, VehicleId};
use crate::tensor::Tensor;

/// Per-step bookkeeping returned next to the reward.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    pub collisions: usize,
    pub lane_changes: usize,
    /// AVs that left through their own ramp.
    pub ramp_exits: usize,
    /// AVs that left the road any other way (wrong exit, main end, collision).
    pub failed_exits: usize,
    /// Sum of alive AV speeds over physics steps, and the number of terms.
    pub av_speed_sum: f64,
    pub av_speed_count: usize,
}

impl StepInfo {
    pub fn absorb(&mut self, other: StepInfo) {
        self.collisions += other.collisions;
        self.lane_changes += other.lane_changes;
        self.ramp_exits += other.ramp_exits;
        self.failed_exits += other.failed_exits;
        self.av_speed_sum += other.av_speed_sum;
        self.av_speed_count += other.av_speed_count;
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Arc<GraphObservation>,
    pub reward: f64,
    /// True terminal state. Running out of horizon is not terminal.
    pub done: bool,
    pub info: StepInfo,
}

/// A decision process seen through graph observations.
pub trait Environment {
    fn spec(&self) -> EnvSpec;

    /// Physics steps per decision; the harness converts horizons with it.
    fn steps_per_decision(&self) -> usize {
        1
    }

    /// Starts an episode whose randomness derives from `episode_seed`.
    fn reset(&mut self, episode_seed: u64) -> Arc<GraphObservation>;

    fn step(&mut self, actions: &Actions) -> Result<StepOutcome, SimError>;
}

pub fn env_spec(cfg: &ScenarioConfig) -> EnvSpec {
    EnvSpec {
        slots: cfg.slot_count(),
        feature_width: feature_width(cfg.scenario),
        action_space: match cfg.scenario {
            Scenario::HighwayRamping => ActionSpace::Discrete { n: 3 },
            Scenario::FigureEight => ActionSpace::Continuous {
                low: cfg.a_min,
                high: cfg.a_max,
            },
        },
    }
}

/// One of the two traffic scenarios. One environment step spans one decision
/// period; the reward is summed over its physics steps.
pub struct TrafficEnv {
    cfg: ScenarioConfig,
    reward: RewardConfig,
    sim: Simulator,
    obs: Arc<GraphObservation>,
    trace: Option<TraceWriter<Vec<u8>>>,
}

impl TrafficEnv {
    pub fn new(cfg: ScenarioConfig, reward: RewardConfig) -> Self {
        let sim = Simulator::new(cfg.clone(), stream_rng(0, Stream::Sim));
        let obs = Arc::new(build_observation(sim.vehicles(), &cfg));
        Self {
            cfg,
            reward,
            sim,
            obs,
            trace: None,
        }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Starts recording every physics step as JSON lines.
    pub fn start_trace(&mut self) {
        self.trace = Some(TraceWriter::new(Vec::new()));
    }

    pub fn take_trace(&mut self) -> Option<Vec<u8>> {
        self.trace.take().map(TraceWriter::into_inner)
    }

    fn physics_actions(&self, actions: &Actions, first: bool) -> BTreeMap<VehicleId, AvAction> {
        let lane_actions = |raw: &[usize]| -> Vec<AvAction> {
            raw.iter()
                .map(|&a| AvAction::Lane(LaneCommand::from_index(a).expect("lane command index")))
                .collect()
        };
        let decided = match (self.cfg.scenario, actions, first) {
            (Scenario::HighwayRamping, Actions::Discrete(raw), true) => {
                crate::graph::mask_actions(&lane_actions(raw), &self.obs)
            }
            (Scenario::FigureEight, Actions::Continuous(raw), _) => {
                let accel: Vec<AvAction> = raw.iter().map(|&a| AvAction::Accel(a)).collect();
                crate::graph::mask_actions(&accel, &self.obs)
            }
            _ => BTreeMap::new(),
        };
        // Vehicles spawned after the decision keep their lane.
        self.sim
            .alive_avs()
            .map(|v| {
                let a = decided.get(&v.id).copied().unwrap_or(match self.cfg.scenario {
                    Scenario::HighwayRamping => AvAction::Lane(LaneCommand::Straight),
                    Scenario::FigureEight => AvAction::Accel(0.0),
                });
                (v.id, a)
            })
            .collect()
    }
}

impl Environment for TrafficEnv {
    fn spec(&self) -> EnvSpec {
        env_spec(&self.cfg)
    }

    fn steps_per_decision(&self) -> usize {
        self.cfg.decision_period_steps
    }

    fn reset(&mut self, episode_seed: u64) -> Arc<GraphObservation> {
        self.sim = Simulator::new(self.cfg.clone(), stream_rng(episode_seed, Stream::Sim));
        self.obs = Arc::new(build_observation(self.sim.vehicles(), &self.cfg));
        self.obs.clone()
    }

    fn step(&mut self, actions: &Actions) -> Result<StepOutcome, SimError> {
        let mut reward = 0.0;
        let mut info = StepInfo::default();
        let weights = self.reward.weights();
        for k in 0..self.cfg.decision_period_steps {
            let physics = self.physics_actions(actions, k == 0);
            let step = self.sim.step_index();
            let events = self.sim.step(&physics)?;
            if let Some(t) = &mut self.trace {
                t.record(step, self.sim.vehicles(), &physics, &events).expect("in-memory trace");
            }
            let kinds = self.sim.kinds();
            let ramp = events.successful_ramp_exits(kinds);
            let av_exits = events.exits.iter().filter(|(id, _)| kinds[id].is_av()).count();
            let av_removed = events.removed.iter().filter(|id| kinds[id].is_av()).count();
            info.ramp_exits += ramp;
            info.failed_exits += av_exits - ramp + av_removed;
            info.collisions += events.collisions;
            info.lane_changes += events.lane_changes_by_avs;
            for v in self.sim.alive_avs() {
                info.av_speed_sum += v.speed_mps;
                info.av_speed_count += 1;
            }
            reward += match self.cfg.scenario {
                Scenario::HighwayRamping => highway_reward(self.sim.vehicles(), &events, &weights, &self.cfg).total,
                Scenario::FigureEight => {
                    figure_eight_reward(&slot_speeds(self.sim.vehicles(), &self.cfg), self.reward.v_desired_mps)
                }
            };
        }
        self.obs = Arc::new(build_observation(self.sim.vehicles(), &self.cfg));
        Ok(StepOutcome {
            obs: self.obs.clone(),
            reward,
            done: false,
            info,
        })
    }
}

/// Deterministic finite MDP with one agent slot and one-hot state features.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    /// `next[s][a]`.
    pub next: Vec<Vec<usize>>,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    state: usize,
}

impl TabularEnv {
    pub fn new(next: Vec<Vec<usize>>, reward: Vec<Vec<f64>>) -> Self {
        assert_eq!(next.len(), reward.len(), "one reward row per state");
        let n = next.len();
        assert!(next.iter().flatten().all(|&s| s < n), "successor out of range");
        Self { next, reward, state: 0 }
    }

    pub fn states(&self) -> usize {
        self.next.len()
    }

    pub fn actions(&self) -> usize {
        self.next[0].len()
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn observation(&self, state: usize) -> GraphObservation {
        let mut features = Tensor::zeros(1, self.states());
        features.set(0, state, 1.0);
        GraphObservation {
            node_features: features,
            adjacency: Tensor::ones(1, 1),
            index: None,
            occupancy: vec![true],
            slot_to_vehicle: BTreeMap::from([(0, 0)]),
            first_av_slot: 0,
        }
    }

    /// Action values of the optimal policy by value iteration.
    pub fn optimal_q(&self, gamma: f64, sweeps: usize) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; self.actions()]; self.states()];
        for _ in 0..sweeps {
            let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            for (s, row) in q.iter_mut().enumerate() {
                for (a, x) in row.iter_mut().enumerate() {
                    *x = self.reward[s][a] + gamma * v[self.next[s][a]];
                }
            }
        }
        q
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            slots: 1,
            feature_width: self.states(),
            action_space: ActionSpace::Discrete { n: self.actions() },
        }
    }

    fn reset(&mut self, episode_seed: u64) -> Arc<GraphObservation> {
        self.state = stream_rng(episode_seed, Stream::Sim).gen_range(0..self.states());
        Arc::new(self.observation(self.state))
    }

    fn step(&mut self, actions: &Actions) -> Result<StepOutcome, SimError> {
        let a = actions.discrete()[0];
        let reward = self.reward[self.state][a];
        self.state = self.next[self.state][a];
        Ok(StepOutcome {
            obs: Arc::new(self.observation(self.state)),
            reward,
            done: false,
            info: StepInfo::default(),
        })
    }
}
