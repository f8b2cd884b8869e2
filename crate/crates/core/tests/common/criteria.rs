//! End-to-end checks shared by the integration tests and the acceptance
//! runner. Each returns a one-line summary, or the reason it failed.

// `ensure!(x < tol)` negates on purpose so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use gcav::graph::GraphObservation;
use gcav::harness::{fit, Environment, Schedule, TabularEnv};
use gcav::nn::{Encoder, EncoderKind, EncoderSpec, Grad, Mlp, ObsBatch};
use gcav::reward::{figure_eight_reward, highway_reward, intention_reward, RewardWeights};
use gcav::rl::{
    argmax, ActionSpace, Actions, Agent, AlgoConfig, Algorithm, DeterministicAgent, EnvSpec, Mode, PolicyGradientAgent,
    PrioritizedReplay, QAgent, Transition,
};
use gcav::rng::{stream_rng, Stream};
use gcav::sim::{
    safe_following_gap, AvAction, LaneCommand, Scenario, ScenarioConfig, SimEvents, Simulator, VehicleKind, VehicleState,
};
use gcav::tensor::{ParamId, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{grad_check, random_obs, random_transition, GradReport};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn dense(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn relu(m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    m.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn propagate(enc: &Encoder, store: &ParamStore, obs: &GraphObservation) -> Tensor {
    let batch = ObsBatch::new([obs]);
    let tape = Tape::new();
    let x = tape.constant(&batch.features);
    enc.propagate(&tape, store, &batch, x, Grad::Frozen).unwrap().value()
}

pub fn fully_occupied<R: Rng>(rng: &mut R, n: usize, width: usize) -> GraphObservation {
    loop {
        let o = random_obs(rng, n, width, 0);
        if o.occupancy.iter().all(|&x| x) {
            return o;
        }
    }
}

/// Row `i` of the result is row `perm[i]` of `obs`.
pub fn permuted(obs: &GraphObservation, perm: &[usize]) -> GraphObservation {
    let n = perm.len();
    let w = obs.node_features.cols();
    let mut f = Tensor::zeros(n, w);
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for c in 0..w {
            f.set(i, c, obs.node_features.get(perm[i], c));
        }
        for j in 0..n {
            a.set(i, j, obs.adjacency.get(perm[i], perm[j]));
        }
    }
    GraphObservation {
        node_features: f,
        adjacency: a,
        index: None,
        occupancy: perm.iter().map(|&p| obs.occupancy[p]).collect(),
        slot_to_vehicle: BTreeMap::new(),
        first_av_slot: 0,
    }
}

/// `‖P·f(N, A) − f(PN, PAPᵀ)‖∞` over 100 random graphs, and the identity
/// adjacency against a dense stack.
pub fn gcn_correctness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = stream_rng(seed, Stream::Init);
        let n = rng.gen_range(2..12);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &EncoderSpec::default(), 5, &mut rng);
        let obs = random_obs(&mut rng, n, 5, 0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let base = enc.embed(&store, &ObsBatch::new([&obs]));
        let moved = enc.embed(&store, &ObsBatch::new([&permuted(&obs, &perm)]));
        for i in 0..n {
            for c in 0..base.cols() {
                worst = worst.max((moved.get(i, c) - base.get(perm[i], c)).abs());
            }
        }
    }
    ensure!(worst < 1e-8, "permutation error {worst:e}");

    let mut dense_err = 0.0f64;
    for seed in 0..20 {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let spec = EncoderSpec {
            kind: EncoderKind::Gcn,
            layers: vec![7, 4],
            skip_connection: false,
        };
        let enc = Encoder::new(&mut store, "enc", &spec, 3, &mut rng);
        let mut obs = fully_occupied(&mut rng, 6, 3);
        obs.adjacency = Tensor::eye(6);
        let w: Vec<Vec<Vec<f64>>> = enc.params().iter().map(|&p| rows(store.get(p))).collect();
        let want = dense(&relu(dense(&rows(&obs.node_features), &w[0])), &w[1]);
        let got = propagate(&enc, &store, &obs);
        for (i, row) in want.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                dense_err = dense_err.max((got.get(i, j) - v).abs());
            }
        }
    }
    ensure!(dense_err <= 1e-12, "identity adjacency differs from dense stack by {dense_err:e}");
    Ok(format!("permutation error {worst:.1e}, identity-adjacency error {dense_err:.1e}"))
}

// Gradient suite.

const SLOTS: usize = 5;
const WIDTH: usize = 4;
const FIRST_AV: usize = 2;

fn small_spec(kind: EncoderKind) -> EncoderSpec {
    EncoderSpec {
        kind,
        layers: vec![6, 5],
        skip_connection: true,
    }
}

fn small_env(space: ActionSpace) -> EnvSpec {
    EnvSpec {
        slots: SLOTS,
        feature_width: WIDTH,
        action_space: space,
    }
}

fn small(algorithm: Algorithm) -> AlgoConfig {
    AlgoConfig {
        head_hidden: 6,
        ..AlgoConfig::for_algorithm(algorithm)
    }
}

#[derive(Default)]
struct Totals {
    checked: usize,
    skipped: usize,
    worst: f64,
}

impl Totals {
    fn add(&mut self, r: GradReport) {
        self.checked += r.checked;
        self.skipped += r.skipped;
        self.worst = self.worst.max(r.worst);
    }

    fn verdict(&self, what: &str) -> Result<(), String> {
        ensure!(self.checked > 0, "{what}: nothing checked");
        ensure!(self.worst < 1e-4, "{what}: relative error {:e}", self.worst);
        ensure!(self.skipped * 100 <= self.checked, "{what}: {} kinks skipped of {}", self.skipped, self.checked);
        Ok(())
    }
}

fn random_param<R: Rng>(store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    store.insert(name, Tensor::matrix(rows, cols, data))
}

fn discrete_batch<R: Rng>(rng: &mut R, n: usize) -> Vec<Transition> {
    (0..n)
        .map(|_| {
            let a = (0..SLOTS).map(|_| rng.gen_range(0..3)).collect();
            random_transition(rng, SLOTS, WIDTH, FIRST_AV, Actions::Discrete(a))
        })
        .collect()
}

fn continuous_batch<R: Rng>(rng: &mut R, n: usize) -> Vec<Transition> {
    (0..n)
        .map(|_| {
            let a = (0..SLOTS).map(|_| rng.gen_range(-3.0..3.0)).collect();
            random_transition(rng, SLOTS, WIDTH, FIRST_AV, Actions::Continuous(a))
        })
        .collect()
}

pub fn tape_gradients(seeds: u64) -> Result<(), String> {
    let mut totals = Totals::default();
    for seed in 0..seeds {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let x = random_param(&mut store, "x", 4, 3, &mut rng);
        let w = random_param(&mut store, "w", 3, 5, &mut rng);
        let b = random_param(&mut store, "b", 1, 5, &mut rng);
        let blocks: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
        totals.add(grad_check(
            &mut store,
            |s| s,
            &[x, w, b],
            |s, tape| {
                let h = tape.param(s, x).matmul(tape.param(s, w)).unwrap().add_row(tape.param(s, b)).unwrap();
                let a = h.tanh().square().mean();
                let c = h.block_matmul(Rc::new(blocks.clone()), 2, 2).unwrap().relu().sum();
                let ls = h.log_softmax();
                let d = ls.gather_cols(&idx).unwrap().sum();
                let e = ls.exp().mul(ls).unwrap().sum_cols().neg().expand_cols(2).unwrap().sum();
                let f = h.square().add_scalar(1.0).ln().masked_mean(&weights).unwrap();
                let g = h.clamp(-0.5, 0.5).minimum(h.scale(0.3)).unwrap().mul_const(&weights).unwrap().sum();
                let wide = h.concat_cols(tape.param(s, x)).unwrap();
                let k = wide.sub(h.scale(2.0).concat_cols(tape.param(s, x).scale(0.5)).unwrap()).unwrap().square().sum();
                [c, d, e, f, g, k.scale(0.1)].into_iter().fold(a, |acc, t| acc.add(t).unwrap())
            },
            8,
            &mut rng,
        ));
    }
    totals.verdict("tape")
}

pub fn encoder_gradients(seeds: u64) -> Result<(), String> {
    for kind in [EncoderKind::Gcn, EncoderKind::Flat] {
        let mut totals = Totals::default();
        for seed in 0..seeds {
            let mut rng = stream_rng(seed, Stream::Init);
            let mut store = ParamStore::new();
            let spec = small_spec(kind);
            let enc = Encoder::new(&mut store, "enc", &spec, WIDTH, &mut rng);
            let head = Mlp::new(&mut store, "head", &[spec.output_width(WIDTH), 6, 3], &mut rng);
            let obs: Vec<_> = (0..3).map(|_| random_obs(&mut rng, SLOTS, WIDTH, FIRST_AV)).collect();
            let batch = ObsBatch::new(&obs);
            let targets: Vec<f64> = (0..batch.rows() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ids: Vec<ParamId> = store.ids().collect();
            // Zero biases put dead-slot rows exactly on a ReLU kink.
            for &id in &ids {
                store.get_mut(id).data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
            }
            totals.add(grad_check(
                &mut store,
                |s| s,
                &ids,
                |s, tape| {
                    let z = enc.forward(tape, s, &batch, Grad::Track).unwrap();
                    let out = head.forward(tape, s, z, Grad::Track).unwrap();
                    out.sub(tape.constant_matrix(batch.rows(), 3, targets.clone())).unwrap().square().sum()
                },
                6,
                &mut rng,
            ));
        }
        totals.verdict(kind.as_str())?;
    }
    Ok(())
}

pub fn q_loss_gradients(seeds: u64) -> Result<(), String> {
    for algorithm in [Algorithm::Dqn, Algorithm::DoubleDqn, Algorithm::DuelingDqn, Algorithm::DqnPer] {
        let mut totals = Totals::default();
        for seed in 0..seeds {
            let mut rng = stream_rng(seed, Stream::Replay);
            let mut agent = QAgent::new(small(algorithm), &small_spec(EncoderKind::Gcn), small_env(ActionSpace::Discrete { n: 3 }), seed);
            // Pull the target network away from the online one.
            for id in agent.target_params() {
                agent.store_mut().get_mut(id).data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
            }
            let batch = discrete_batch(&mut rng, 4);
            let isw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..1.0)).collect();
            let targets = agent.target_params();
            let online: Vec<ParamId> = agent.store().ids().filter(|id| !targets.contains(id)).collect();
            totals.add(grad_check(
                &mut agent,
                |a| a.store_mut(),
                &online,
                |a, tape| {
                    let refs: Vec<&Transition> = batch.iter().collect();
                    a.loss(tape, &refs, &isw).unwrap().0
                },
                4,
                &mut rng,
            ));
        }
        totals.verdict(algorithm.as_str())?;
    }
    Ok(())
}

pub fn policy_loss_gradients(seeds: u64) -> Result<(), String> {
    let discrete = ActionSpace::Discrete { n: 3 };
    let continuous = ActionSpace::Continuous { low: -3.0, high: 3.0 };
    let cases = [
        (Algorithm::Reinforce, discrete),
        (Algorithm::Ac, discrete),
        (Algorithm::A2c, discrete),
        (Algorithm::Ppo, discrete),
        (Algorithm::Reinforce, continuous),
        (Algorithm::A2c, continuous),
        (Algorithm::Ppo, continuous),
    ];
    for (algorithm, space) in cases {
        let mut totals = Totals::default();
        for seed in 0..seeds {
            let mut rng = stream_rng(seed, Stream::Replay);
            let mut agent = PolicyGradientAgent::new(small(algorithm), &small_spec(EncoderKind::Gcn), small_env(space), seed);
            // Move the policy away from its near-uniform start.
            for id in agent.store().ids().collect::<Vec<_>>() {
                agent.store_mut().get_mut(id).data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
            }
            let batch = match space {
                ActionSpace::Discrete { .. } => discrete_batch(&mut rng, 4),
                ActionSpace::Continuous { .. } => continuous_batch(&mut rng, 4),
            };
            let adv: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vt: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let old: Vec<f64> = (0..4 * SLOTS).map(|_| rng.gen_range(-3.0..0.0)).collect();
            let value_targets = (algorithm != Algorithm::Reinforce).then_some(vt.as_slice());
            let old_log_prob = (algorithm == Algorithm::Ppo).then_some(old.as_slice());
            let ids: Vec<ParamId> = agent.store().ids().collect();
            totals.add(grad_check(
                &mut agent,
                |a| a.store_mut(),
                &ids,
                |a, tape| {
                    let refs: Vec<&Transition> = batch.iter().collect();
                    a.loss(tape, &refs, &adv, value_targets, old_log_prob).unwrap()
                },
                4,
                &mut rng,
            ));
        }
        totals.verdict(&format!("{algorithm} {space:?}"))?;
    }
    Ok(())
}

pub fn deterministic_loss_gradients(seeds: u64) -> Result<(), String> {
    for algorithm in [Algorithm::Ddpg, Algorithm::Td3] {
        let mut critic_totals = Totals::default();
        let mut actor_totals = Totals::default();
        for seed in 0..seeds {
            let mut rng = stream_rng(seed, Stream::Replay);
            let space = ActionSpace::Continuous { low: -3.0, high: 3.0 };
            let mut agent = DeterministicAgent::new(small(algorithm), &small_spec(EncoderKind::Gcn), small_env(space), seed);
            let batch = continuous_batch(&mut rng, 4);
            let refs: Vec<&Transition> = batch.iter().collect();
            let noise: Vec<f64> = (0..4 * SLOTS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = agent
                .critic_targets(&refs, (algorithm == Algorithm::Td3).then_some(noise.as_slice()))
                .unwrap();
            let actor = agent.actor_params();
            let target = agent.target_params();
            let critic: Vec<ParamId> = agent.store().ids().filter(|id| !actor.contains(id) && !target.contains(id)).collect();
            critic_totals.add(grad_check(
                &mut agent,
                |a| a.store_mut(),
                &critic,
                |a, tape| {
                    let refs: Vec<&Transition> = batch.iter().collect();
                    a.critic_loss(tape, &refs, &y).unwrap()
                },
                4,
                &mut rng,
            ));
            actor_totals.add(grad_check(
                &mut agent,
                |a| a.store_mut(),
                &actor,
                |a, tape| {
                    let refs: Vec<&Transition> = batch.iter().collect();
                    a.actor_loss(tape, &refs).unwrap()
                },
                4,
                &mut rng,
            ));
        }
        critic_totals.verdict(&format!("{algorithm} critic"))?;
        actor_totals.verdict(&format!("{algorithm} actor"))?;
    }
    Ok(())
}

pub fn gradient_suite() -> Outcome {
    tape_gradients(100)?;
    encoder_gradients(100)?;
    q_loss_gradients(100)?;
    policy_loss_gradients(100)?;
    deterministic_loss_gradients(100)?;
    Ok("tape, encoders, Q, policy-gradient, DDPG and TD3 losses over 100 seeds".into())
}

// Tabular oracle.

pub const TABULAR_GAMMA: f64 = 0.5;

pub fn tabular_mdp() -> TabularEnv {
    TabularEnv::new(
        vec![vec![0, 1], vec![2, 0], vec![0, 2]],
        vec![vec![0.0, 0.2], vec![0.0, 0.5], vec![1.0, 0.1]],
    )
}

/// Trains a Q learner for at most 5000 updates and returns `max |Q − Q*|`.
pub fn tabular_q_error(algorithm: Algorithm) -> Result<f64, String> {
    let mut env = tabular_mdp();
    let q_star = env.optimal_q(TABULAR_GAMMA, 200);
    let cfg = AlgoConfig {
        gamma: TABULAR_GAMMA,
        learning_rate: 3e-3,
        learning_starts: 64,
        train_freq: 1,
        target_update_period: 100,
        epsilon_start: 1.0,
        epsilon_end: 1.0,
        ..AlgoConfig::for_algorithm(algorithm)
    };
    let mut agent = QAgent::new(cfg, &EncoderSpec::default(), env.spec(), 7);
    // At most one update per step.
    let schedule = Schedule {
        epochs: 1,
        episodes_per_epoch: 200,
        horizon_steps: 25,
    };
    fit(&mut env, &mut agent, 3, schedule, |_, _, _| {}).map_err(|e| e.to_string())?;
    ensure!(agent.updates() <= 5000, "{} updates", agent.updates());
    let mut worst = 0.0f64;
    for (s, row) in q_star.iter().enumerate() {
        let q = agent.q_values(&env.observation(s));
        for (a, want) in row.iter().enumerate() {
            worst = worst.max((q.get(0, a) - want).abs());
        }
    }
    Ok(worst)
}

/// States where the trained stochastic policy's mode differs from the
/// optimal action.
pub fn tabular_policy_mistakes(algorithm: Algorithm) -> Result<Vec<usize>, String> {
    let mut env = tabular_mdp();
    let q_star = env.optimal_q(TABULAR_GAMMA, 200);
    let cfg = AlgoConfig {
        gamma: TABULAR_GAMMA,
        learning_rate: 3e-3,
        rollout_len: 64,
        entropy_coef: 0.0,
        ..AlgoConfig::for_algorithm(algorithm)
    };
    let mut agent = PolicyGradientAgent::new(cfg, &EncoderSpec::default(), env.spec(), 11);
    let schedule = Schedule {
        epochs: 40,
        episodes_per_epoch: 10,
        horizon_steps: 32,
    };
    fit(&mut env, &mut agent, 5, schedule, |_, _, _| {}).map_err(|e| e.to_string())?;
    let mut wrong = Vec::new();
    for (s, row) in q_star.iter().enumerate() {
        let logits = agent.policy_output(&env.observation(s)).map_err(|e| e.to_string())?;
        if argmax(logits.row(0)) != argmax(row) {
            wrong.push(s);
        }
    }
    Ok(wrong)
}

pub fn tabular_oracle() -> Outcome {
    let mut parts = Vec::new();
    for alg in [Algorithm::Dqn, Algorithm::DoubleDqn, Algorithm::DuelingDqn] {
        let err = tabular_q_error(alg)?;
        ensure!(err < 0.05, "{alg}: max |Q - Q*| = {err}");
        parts.push(format!("{alg} {err:.4}"));
    }
    for alg in [Algorithm::A2c, Algorithm::Ppo] {
        let wrong = tabular_policy_mistakes(alg)?;
        ensure!(wrong.is_empty(), "{alg}: wrong action in states {wrong:?}");
    }
    Ok(format!("max |Q - Q*|: {}; A2C and PPO optimal on all states", parts.join(", ")))
}

// Reward oracles.

/// Intention reward written out case by case, one branch per road section.
pub fn intention_oracle(kind: VehicleKind, lane: usize, x: f64, l1: f64, l2: f64, lanes: usize) -> f64 {
    let leftmost = lane == 0;
    let rightmost = lane == lanes - 1;
    let r1 = -x / l1;
    let r2 = 1.0 - x / l1;
    let r3 = -x / l1;
    let r4 = -(x - l1) / (l2 - l1);
    let r5 = 1.0 - (x - l1) / (l2 - l1);
    if kind == VehicleKind::AvRamp1 && x <= l1 && leftmost {
        return r1;
    }
    if kind == VehicleKind::AvRamp1 && x <= l1 && rightmost {
        return r2;
    }
    if kind == VehicleKind::AvRamp2 && x <= l1 && rightmost {
        return r3;
    }
    if kind == VehicleKind::AvRamp2 && x > l1 && x <= l2 && leftmost {
        return r4;
    }
    if kind == VehicleKind::AvRamp2 && x > l1 && x <= l2 && rightmost {
        return r5;
    }
    0.0
}

pub fn random_highway_states<R: Rng>(rng: &mut R, cfg: &ScenarioConfig) -> Vec<VehicleState> {
    let n = rng.gen_range(0..14);
    (0..n)
        .map(|i| {
            let kind = match rng.gen_range(0..3) {
                0 => VehicleKind::Hv,
                1 => VehicleKind::AvRamp1,
                _ => VehicleKind::AvRamp2,
            };
            let mut v = VehicleState::new(
                i as u64,
                kind,
                rng.gen_range(0..cfg.lane_count),
                rng.gen_range(0.0..cfg.highway_length_m),
                rng.gen_range(0.0..cfg.v_max_av_mps),
                i,
            );
            v.alive = rng.gen_bool(0.85);
            v
        })
        .collect()
}

pub fn figure_eight_oracle(speeds: &[f64], vd: f64) -> f64 {
    let mut ideal_sq = 0.0;
    let mut dev_sq = 0.0;
    for &v in speeds {
        ideal_sq += vd * vd;
        dev_sq += (vd - v) * (vd - v);
    }
    let ideal = ideal_sq.sqrt();
    let r = (ideal - dev_sq.sqrt()) / ideal;
    if r > 0.0 {
        r
    } else {
        0.0
    }
}

pub fn reward_oracles() -> Outcome {
    let cfg = ScenarioConfig::highway_ramping();
    let (l1, l2, lanes) = (cfg.ramp1_pos_m, cfg.ramp2_pos_m, cfg.lane_count);
    let mut rng = stream_rng(17, Stream::Sim);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let states = random_highway_states(&mut rng, &cfg);
        let w = RewardWeights {
            w1: rng.gen_range(0.0..2.0),
            w2: rng.gen_range(0.0..2.0),
            w3: -rng.gen_range(0.0..1.0),
            w4: -rng.gen_range(0.0..20.0),
        };
        let events = SimEvents {
            collisions: rng.gen_range(0..3),
            lane_changes_by_avs: rng.gen_range(0..5),
            ..Default::default()
        };
        let (mut intent, mut speed, mut count) = (0.0, 0.0, 0usize);
        for v in states.iter().filter(|v| v.alive && v.kind != VehicleKind::Hv) {
            intent += intention_oracle(v.kind, v.lane, v.pos_m, l1, l2, lanes);
            speed += v.speed_mps / cfg.v_max_av_mps;
            count += 1;
        }
        let (ri, ras) = if count == 0 {
            (0.0, 0.0)
        } else {
            (intent / count as f64, speed / count as f64)
        };
        let want = w.w1 * ri + w.w2 * ras + w.w3 * events.lane_changes_by_avs as f64 + w.w4 * events.collisions as f64;
        let got = highway_reward(&states, &events, &w, &cfg);
        worst = worst
            .max((got.total - want).abs())
            .max((got.r_intention - ri).abs())
            .max((got.r_avg_speed - ras).abs());
    }
    ensure!(worst < 1e-12, "highway reward differs by {worst:e}");

    let mut worst8 = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..20);
        let vd = rng.gen_range(1.0..40.0);
        let speeds: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.5 * vd)).collect();
        worst8 = worst8.max((figure_eight_reward(&speeds, vd) - figure_eight_oracle(&speeds, vd)).abs());
    }
    ensure!(worst8 < 1e-12, "figure-eight reward differs by {worst8:e}");

    let right = cfg.lane_count - 1;
    let at = |kind, lane, x| intention_reward(&VehicleState::new(0, kind, lane, x, 0.0, 0), &cfg);
    let endpoints = [
        (at(VehicleKind::AvRamp1, right, 0.0), 1.0),
        (at(VehicleKind::AvRamp1, 0, l1), -1.0),
        (at(VehicleKind::AvRamp1, 0, 0.0), 0.0),
        (at(VehicleKind::AvRamp1, right, l1), 0.0),
        (at(VehicleKind::AvRamp2, right, l1), -1.0),
        (at(VehicleKind::AvRamp2, 0, l2), -1.0),
        (at(VehicleKind::AvRamp2, right, l2), 0.0),
        (at(VehicleKind::AvRamp2, right, 120.0), 0.5),
    ];
    for (k, (got, want)) in endpoints.iter().enumerate() {
        ensure!(got == want, "endpoint {k}: {got} != {want}");
    }
    Ok(format!("highway error {worst:.1e}, figure-eight error {worst8:.1e}, endpoints exact"))
}

// Simulator safety.

/// A single long lane with no inflow, where HVs cannot change lanes.
pub fn single_lane_road() -> ScenarioConfig {
    ScenarioConfig {
        lane_count: 1,
        max_hvs: 10,
        highway_length_m: 1.0e6,
        ramp1_pos_m: 1.0e6 - 2.0,
        ramp2_pos_m: 1.0e6 - 1.0,
        inflow_hv_vps: 0.0,
        inflow_av_vps: 0.0,
        ..ScenarioConfig::highway_ramping()
    }
}

/// Ten HVs, back to front, each at least a safe stopping gap behind its leader.
pub fn feasible_platoon<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<VehicleState> {
    let p = cfg.idm_for(VehicleKind::Hv);
    let limit = cfg.speed_limit(VehicleKind::Hv);
    let mut vehicles = Vec::new();
    let mut pos = 0.0;
    let mut speed = rng.gen_range(0.0..limit);
    for i in 0..10 {
        vehicles.push(VehicleState::new(i as u64 + 1, VehicleKind::Hv, 0, pos, speed, i));
        let leader_speed = rng.gen_range(0.0..limit);
        let gap = safe_following_gap(speed, leader_speed, &p, cfg.a_min) + rng.gen_range(0.0..30.0);
        pos += cfg.vehicle_length_m + gap;
        speed = leader_speed;
    }
    vehicles
}

pub fn bounds_violation(sim: &Simulator) -> Option<String> {
    let cfg = sim.config();
    for v in sim.vehicles() {
        if !v.alive {
            return Some(format!("dead vehicle {} kept", v.id));
        }
        if !(v.speed_mps >= 0.0 && v.speed_mps <= cfg.speed_limit(v.kind)) {
            return Some(format!("speed {}", v.speed_mps));
        }
        if v.lane >= cfg.lane_count {
            return Some(format!("lane {}", v.lane));
        }
        let in_range = match cfg.scenario {
            Scenario::HighwayRamping => (0.0..=cfg.highway_length_m).contains(&v.pos_m),
            Scenario::FigureEight => (0.0..cfg.loop_length_m()).contains(&v.pos_m),
        };
        if !in_range {
            return Some(format!("position {}", v.pos_m));
        }
    }
    let mut slots: Vec<usize> = sim.vehicles().iter().map(|v| v.slot).collect();
    slots.sort_unstable();
    slots.dedup();
    if slots.len() != sim.vehicles().len() {
        return Some("shared slot".into());
    }
    let avs = sim.vehicles().iter().filter(|v| v.kind.is_av()).count();
    if avs > cfg.max_avs || sim.vehicles().len() - avs > cfg.max_hvs {
        return Some("capacity exceeded".into());
    }
    None
}

fn random_sim_actions<R: Rng>(sim: &Simulator, rng: &mut R) -> BTreeMap<u64, AvAction> {
    let scenario = sim.config().scenario;
    sim.alive_avs()
        .map(|v| {
            let a = match scenario {
                Scenario::HighwayRamping => AvAction::Lane(LaneCommand::from_index(rng.gen_range(0..3)).unwrap()),
                Scenario::FigureEight => AvAction::Accel(rng.gen_range(-6.0..6.0)),
            };
            (v.id, a)
        })
        .collect()
}

pub fn simulator_safety() -> Outcome {
    let cfg = single_lane_road();
    for seed in 0..5 {
        let mut rng = stream_rng(seed, Stream::Spawn);
        let platoon = feasible_platoon(&cfg, &mut rng);
        let mut sim = Simulator::with_vehicles(cfg.clone(), platoon, stream_rng(seed, Stream::Sim));
        for step in 0..10_000 {
            let ev = sim.step(&BTreeMap::new()).map_err(|e| e.to_string())?;
            ensure!(ev.collisions == 0, "platoon {seed}: collision at step {step}");
        }
        ensure!(sim.vehicles().len() == 10, "platoon {seed}: vehicles left the road");
    }
    for episode in 0..1000u64 {
        let scenario = if episode % 2 == 0 { Scenario::HighwayRamping } else { Scenario::FigureEight };
        let mut rng = stream_rng(episode, Stream::Exploration);
        let mut sim = Simulator::new(ScenarioConfig::preset(scenario), stream_rng(episode, Stream::Sim));
        for step in 0..60 {
            if let Some(v) = bounds_violation(&sim) {
                return Err(format!("episode {episode} step {step}: {v}"));
            }
            let actions = random_sim_actions(&sim, &mut rng);
            sim.step(&actions).map_err(|e| e.to_string())?;
        }
        if let Some(v) = bounds_violation(&sim) {
            return Err(format!("episode {episode} end: {v}"));
        }
    }
    Ok("5 platoons x 10 000 steps collision-free; bounds held on 1000 episodes".into())
}

// Masking.

const MASK_SLOTS: usize = 6;

fn scramble_dead<R: Rng>(obs: &GraphObservation, rng: &mut R) -> GraphObservation {
    let mut o = obs.clone();
    for s in 0..o.slot_count() {
        if !o.occupancy[s] {
            for c in 0..o.node_features.cols() {
                o.node_features.set(s, c, rng.gen_range(-50.0..50.0));
            }
        }
    }
    o
}

fn same(a: f64, b: f64, what: &str) -> Result<(), String> {
    ensure!(a.to_bits() == b.to_bits(), "{what}: {a} vs {b}");
    Ok(())
}

/// Perturbs dead-slot features and compares losses, actions and occupied
/// embeddings bit for bit.
pub fn dead_slot_masking() -> Outcome {
    let spec = EncoderSpec::default();
    let env = |space| EnvSpec {
        slots: MASK_SLOTS,
        feature_width: WIDTH,
        action_space: space,
    };
    let mut tested = 0;
    for seed in 0..40 {
        let mut rng = stream_rng(seed, Stream::Init);
        let discrete: Vec<Transition> = (0..4)
            .map(|_| {
                let a = (0..MASK_SLOTS).map(|_| rng.gen_range(0..3)).collect();
                random_transition(&mut rng, MASK_SLOTS, WIDTH, FIRST_AV, Actions::Discrete(a))
            })
            .collect();
        if discrete[0].obs.occupancy.iter().all(|&o| o) {
            continue;
        }
        tested += 1;
        let scrambled: Vec<Transition> = discrete
            .iter()
            .map(|t| {
                let mut u = t.clone();
                u.obs = Arc::new(scramble_dead(&t.obs, &mut rng));
                u.next_obs = Arc::new(scramble_dead(&t.next_obs, &mut rng));
                u
            })
            .collect();
        let (a, b): (Vec<&Transition>, Vec<&Transition>) = (discrete.iter().collect(), scrambled.iter().collect());
        let occupied: Vec<usize> = (0..MASK_SLOTS).filter(|&s| a[0].obs.occupancy[s]).collect();

        for kind in [EncoderKind::Gcn, EncoderKind::Flat] {
            let mut store = ParamStore::new();
            let enc = Encoder::new(&mut store, "enc", &EncoderSpec { kind, ..spec.clone() }, WIDTH, &mut rng);
            let za = enc.embed(&store, &ObsBatch::new([a[0].obs.as_ref()]));
            let zb = enc.embed(&store, &ObsBatch::new([b[0].obs.as_ref()]));
            for &s in &occupied {
                ensure!(za.row(s) == zb.row(s), "{kind} embedding of slot {s} changed");
            }
        }

        let mut q = QAgent::new(AlgoConfig::for_algorithm(Algorithm::DoubleDqn), &spec, env(ActionSpace::Discrete { n: 3 }), seed);
        ensure!(
            q.act(&a[0].obs, Mode::Eval).unwrap() == q.act(&b[0].obs, Mode::Eval).unwrap(),
            "greedy Q actions changed"
        );
        let isw = [1.0, 0.5, 0.7, 0.2];
        same(q.loss(&Tape::new(), &a, &isw).unwrap().0.item(), q.loss(&Tape::new(), &b, &isw).unwrap().0.item(), "Q loss")?;

        let pg = PolicyGradientAgent::new(AlgoConfig::for_algorithm(Algorithm::Ppo), &spec, env(ActionSpace::Discrete { n: 3 }), seed);
        let (adv, vt, old) = ([0.3, -1.0, 0.5, 0.1], [1.0, 0.0, -0.5, 2.0], vec![-1.1; 4 * MASK_SLOTS]);
        same(
            pg.loss(&Tape::new(), &a, &adv, Some(&vt), Some(&old)).unwrap().item(),
            pg.loss(&Tape::new(), &b, &adv, Some(&vt), Some(&old)).unwrap().item(),
            "PPO loss",
        )?;
        same(pg.value(&a[0].obs).unwrap(), pg.value(&b[0].obs).unwrap(), "state value")?;
        let (pa, pb) = (pg.policy_output(&a[0].obs).unwrap(), pg.policy_output(&b[0].obs).unwrap());
        for &s in &occupied {
            ensure!(pa.row(s) == pb.row(s), "policy of slot {s} changed");
        }

        let with_accel = |t: &Transition| Transition {
            actions: Actions::Continuous((0..MASK_SLOTS).map(|s| s as f64 * 0.4 - 1.0).collect()),
            ..t.clone()
        };
        let (ca, cb): (Vec<Transition>, Vec<Transition>) = (a.iter().map(|t| with_accel(t)).collect(), b.iter().map(|t| with_accel(t)).collect());
        let (ca, cb): (Vec<&Transition>, Vec<&Transition>) = (ca.iter().collect(), cb.iter().collect());
        let td3 = DeterministicAgent::new(
            AlgoConfig::for_algorithm(Algorithm::Td3),
            &spec,
            env(ActionSpace::Continuous { low: -3.0, high: 3.0 }),
            seed,
        );
        let noise = vec![0.3; 4 * MASK_SLOTS];
        let (ya, yb) = (td3.critic_targets(&ca, Some(&noise)).unwrap(), td3.critic_targets(&cb, Some(&noise)).unwrap());
        for r in 0..ya.len() {
            if ca[r / MASK_SLOTS].mask[r % MASK_SLOTS] > 0.0 {
                same(ya[r], yb[r], "critic target")?;
            }
        }
        same(td3.critic_loss(&Tape::new(), &ca, &ya).unwrap().item(), td3.critic_loss(&Tape::new(), &cb, &ya).unwrap().item(), "critic loss")?;
        same(td3.actor_loss(&Tape::new(), &ca).unwrap().item(), td3.actor_loss(&Tape::new(), &cb).unwrap().item(), "actor loss")?;
        ensure!(
            td3.actor_output(&ca[0].obs).unwrap().iter().zip(td3.actor_output(&cb[0].obs).unwrap()).enumerate().all(|(s, (x, y))| !ca[0].obs.occupancy[s] || x.to_bits() == y.to_bits()),
            "deterministic actions changed"
        );
    }
    ensure!(tested >= 10, "only {tested} samples had a dead slot");
    Ok(format!("{tested} batches: embeddings, actions and Q/PPO/TD3 losses bitwise unchanged"))
}

// Prioritized replay.

const DRAWS: usize = 50_000;

fn replay_counts(p: &PrioritizedReplay<usize>, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, Stream::Replay);
    let mut counts = vec![0; p.len()];
    for _ in 0..DRAWS / p.len() {
        let (idx, _) = p.sample(p.len(), 0.4, &mut rng);
        for i in idx {
            counts[i] += 1;
        }
    }
    counts
}

pub fn per_distribution() -> Outcome {
    let n = 20;
    let mut p = PrioritizedReplay::new(n, 0.6, 1e-6);
    for i in 0..n {
        p.push(i);
        p.set_priority(i, 3.0);
    }
    let c = replay_counts(&p, 1);
    let expected = DRAWS as f64 / n as f64;
    let chi2: f64 = c.iter().map(|&k| (k as f64 - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
    ensure!(p_value > 0.01, "uniform case: chi2 = {chi2:.2}, p = {p_value:.4}");

    let mut p = PrioritizedReplay::new(10, 1.0, 1e-6);
    for i in 0..10 {
        p.push(i);
        p.set_priority(i, if i == 3 { 1000.0 } else { 1.0 });
    }
    let want = p.probability(3);
    ensure!((want - 1000.0 / 1009.0).abs() < 1e-12, "tree mass {want}");
    let got = replay_counts(&p, 2)[3] as f64 / DRAWS as f64;
    let rel = (got - want).abs() / want;
    ensure!(rel < 0.02, "extreme priority drawn {got:.4} vs mass {want:.4}");
    Ok(format!("uniform p = {p_value:.3}; extreme priority off by {:.2}%", rel * 100.0))
}
