//! Deterministic microscopic traffic simulator for the highway-ramping and
//! figure-eight scenarios.
//!
//! Vehicles are point masses with a body of `vehicle_length_m` behind the
//! front position `pos_m`. Each physics step applies AV commands, human
//! lane changes, car-following accelerations and explicit Euler integration
//! (`pos += v·dt`, then `v += a·dt` clamped to `[0, limit]`), then resolves
//! exits, collisions and inflow.

mod collision;
mod config;
mod geometry;
mod idm;
mod lane_change;
mod right_of_way;
mod spawn;
mod trace;

pub use collision::detect_collisions;
pub use config::{IdmConfig, IdmParams, Scenario, ScenarioConfig, KMH};
pub use geometry::{Approach, LoopGeometry};
pub use idm::{idm_acceleration, safe_following_gap, Leader};
pub use lane_change::{hv_lane_change_decision, LaneGaps, Neighborhood};
pub use right_of_way::{right_of_way_controller, VirtualLeader};
pub use spawn::{figure_eight_population, lowest_free_slot, spawn_inflow, Spawner};
pub use trace::{TraceRecord, TraceWriter};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;

pub type VehicleId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VehicleKind {
    Hv,
    AvRamp1,
    AvRamp2,
    AvGeneric,
}

impl VehicleKind {
    pub fn is_av(self) -> bool {
        !matches!(self, VehicleKind::Hv)
    }
}

/// A lateral intention or command. Lane 0 is the leftmost lane, so `Left`
/// decreases the lane index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LaneCommand {
    Left,
    Straight,
    Right,
}

pub type Intention = LaneCommand;

impl LaneCommand {
    pub const ALL: [LaneCommand; 3] = [LaneCommand::Left, LaneCommand::Straight, LaneCommand::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub lane: usize,
    pub pos_m: f64,
    pub speed_mps: f64,
    /// Current lateral intention. AVs: the maneuver their route calls for
    /// at this point of the road. HVs: their latest lane-change decision.
    pub intention: Intention,
    pub alive: bool,
    /// Fixed observation slot for the vehicle's lifetime.
    pub slot: usize,
}

impl VehicleState {
    pub fn new(id: VehicleId, kind: VehicleKind, lane: usize, pos_m: f64, speed_mps: f64, slot: usize) -> Self {
        Self {
            id,
            kind,
            lane,
            pos_m,
            speed_mps,
            intention: LaneCommand::Straight,
            alive: true,
            slot,
        }
    }
}

/// Where a vehicle left the highway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitRoute {
    Ramp1,
    Ramp2,
    Main,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimEvents {
    /// Colliding pairs this step (n_col).
    pub collisions: usize,
    /// Lane changes performed by AVs this step (n_LC).
    pub lane_changes_by_avs: usize,
    pub exits: Vec<(VehicleId, ExitRoute)>,
    pub spawns: Vec<VehicleId>,
    /// Vehicles removed after a collision.
    pub removed: Vec<VehicleId>,
}

impl SimEvents {
    /// Exits through the ramp matching the vehicle's route.
    pub fn successful_ramp_exits(&self, kinds: &BTreeMap<VehicleId, VehicleKind>) -> usize {
        self.exits
            .iter()
            .filter(|(id, route)| {
                matches!(
                    (kinds.get(id), route),
                    (Some(VehicleKind::AvRamp1), ExitRoute::Ramp1) | (Some(VehicleKind::AvRamp2), ExitRoute::Ramp2)
                )
            })
            .count()
    }

    pub fn absorb(&mut self, other: SimEvents) {
        self.collisions += other.collisions;
        self.lane_changes_by_avs += other.lane_changes_by_avs;
        self.exits.extend(other.exits);
        self.spawns.extend(other.spawns);
        self.removed.extend(other.removed);
    }
}

/// Command for one AV for one physics step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AvAction {
    Lane(LaneCommand),
    Accel(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("action for unknown or dead vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("vehicle {0} is not an AV")]
    NotAnAv(VehicleId),
    #[error("missing action for AV {0}")]
    MissingAction(VehicleId),
    #[error("action kind does not match scenario for vehicle {0}")]
    WrongActionKind(VehicleId),
}

/// The simulator: owns the vehicle population and the spawn random stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: ScenarioConfig,
    vehicles: Vec<VehicleState>,
    spawner: Spawner,
    rng: StreamRng,
    step: usize,
    geometry: Option<LoopGeometry>,
    kinds: BTreeMap<VehicleId, VehicleKind>,
}

impl Simulator {
    /// A fresh episode. Figure-eight starts with its full population; the
    /// highway starts empty and fills through inflow.
    pub fn new(cfg: ScenarioConfig, mut rng: StreamRng) -> Self {
        let mut spawner = Spawner::new();
        let (vehicles, geometry) = match cfg.scenario {
            Scenario::HighwayRamping => (Vec::new(), None),
            Scenario::FigureEight => (
                figure_eight_population(&cfg, &mut spawner, &mut rng),
                Some(LoopGeometry::new(&cfg)),
            ),
        };
        let mut sim = Self {
            cfg,
            vehicles,
            spawner,
            rng,
            step: 0,
            geometry,
            kinds: BTreeMap::new(),
        };
        sim.record_kinds();
        sim
    }

    /// A simulator over an explicit population; used by tests and tools.
    pub fn with_vehicles(cfg: ScenarioConfig, vehicles: Vec<VehicleState>, rng: StreamRng) -> Self {
        let geometry = (cfg.scenario == Scenario::FigureEight).then(|| LoopGeometry::new(&cfg));
        let mut spawner = Spawner::new();
        let max_id = vehicles.iter().map(|v| v.id).max().unwrap_or(0);
        while spawner.fresh_id() < max_id {}
        let mut sim = Self {
            cfg,
            vehicles,
            spawner,
            rng,
            step: 0,
            geometry,
            kinds: BTreeMap::new(),
        };
        sim.record_kinds();
        sim
    }

    fn record_kinds(&mut self) {
        for v in &self.vehicles {
            self.kinds.insert(v.id, v.kind);
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Kinds of every vehicle that has existed this episode.
    pub fn kinds(&self) -> &BTreeMap<VehicleId, VehicleKind> {
        &self.kinds
    }

    pub fn alive_avs(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.iter().filter(|v| v.alive && v.kind.is_av())
    }

    pub fn is_decision_step(&self) -> bool {
        self.step.is_multiple_of(self.cfg.decision_period_steps)
    }

    fn check_actions(&self, actions: &BTreeMap<VehicleId, AvAction>) -> Result<(), SimError> {
        for (&id, action) in actions {
            let v = self
                .vehicles
                .iter()
                .find(|v| v.id == id && v.alive)
                .ok_or(SimError::UnknownVehicle(id))?;
            if !v.kind.is_av() {
                return Err(SimError::NotAnAv(id));
            }
            let ok = matches!(
                (self.cfg.scenario, action),
                (Scenario::HighwayRamping, AvAction::Lane(_)) | (Scenario::FigureEight, AvAction::Accel(_))
            );
            if !ok {
                return Err(SimError::WrongActionKind(id));
            }
        }
        if let Some(v) = self.alive_avs().find(|v| !actions.contains_key(&v.id)) {
            return Err(SimError::MissingAction(v.id));
        }
        Ok(())
    }

    /// Advances one physics step. `actions` must cover exactly the alive AVs.
    pub fn step(&mut self, actions: &BTreeMap<VehicleId, AvAction>) -> Result<SimEvents, SimError> {
        self.check_actions(actions)?;
        let mut events = SimEvents::default();
        match self.cfg.scenario {
            Scenario::HighwayRamping => self.step_highway(actions, &mut events),
            Scenario::FigureEight => self.step_figure_eight(actions, &mut events),
        }
        self.resolve_collisions(&mut events);
        if self.cfg.scenario == Scenario::HighwayRamping {
            let spawned = spawn_inflow(&self.vehicles, &self.cfg, &mut self.spawner, &mut self.rng);
            for v in spawned {
                events.spawns.push(v.id);
                self.kinds.insert(v.id, v.kind);
                self.vehicles.push(v);
            }
            self.update_intentions();
        }
        self.step += 1;
        Ok(events)
    }

    fn leader_on_lane(&self, idx: usize) -> Option<Leader> {
        let me = &self.vehicles[idx];
        let len = self.cfg.vehicle_length_m;
        self.vehicles
            .iter()
            .filter(|o| o.alive && o.id != me.id && o.lane == me.lane && o.pos_m >= me.pos_m)
            .map(|o| Leader {
                speed: o.speed_mps,
                gap: o.pos_m - len - me.pos_m,
            })
            .min_by(|a, b| a.gap.total_cmp(&b.gap))
    }

    fn leader_on_loop(&self, idx: usize, g: &LoopGeometry) -> Option<Leader> {
        let me = &self.vehicles[idx];
        self.vehicles
            .iter()
            .filter(|o| o.alive && o.id != me.id)
            .map(|o| Leader {
                speed: o.speed_mps,
                gap: g.ahead(me.pos_m, o.pos_m) - self.cfg.vehicle_length_m,
            })
            .min_by(|a, b| a.gap.total_cmp(&b.gap))
    }

    fn step_highway(&mut self, actions: &BTreeMap<VehicleId, AvAction>, events: &mut SimEvents) {
        let lanes = self.cfg.lane_count;
        for v in self.vehicles.iter_mut().filter(|v| v.alive && v.kind.is_av()) {
            if let Some(AvAction::Lane(cmd)) = actions.get(&v.id) {
                let target = match cmd {
                    LaneCommand::Left => v.lane.checked_sub(1),
                    LaneCommand::Straight => None,
                    LaneCommand::Right => (v.lane + 1 < lanes).then_some(v.lane + 1),
                };
                if let Some(t) = target {
                    v.lane = t;
                    events.lane_changes_by_avs += 1;
                }
            }
        }
        if self.is_decision_step() {
            for i in 0..self.vehicles.len() {
                let v = &self.vehicles[i];
                if !v.alive || v.kind.is_av() {
                    continue;
                }
                let nb = Neighborhood::measure(v, &self.vehicles, lanes, self.cfg.vehicle_length_m);
                let idm = self.cfg.idm_for(v.kind);
                let cmd = hv_lane_change_decision(&nb, &idm, self.cfg.lc_hysteresis_m);
                let v = &mut self.vehicles[i];
                v.intention = cmd;
                match cmd {
                    LaneCommand::Left => v.lane -= 1,
                    LaneCommand::Right => v.lane += 1,
                    LaneCommand::Straight => {}
                }
            }
        }
        let accels: Vec<f64> = (0..self.vehicles.len())
            .map(|i| {
                let v = &self.vehicles[i];
                let idm = self.cfg.idm_for(v.kind);
                idm_acceleration(v.speed_mps, self.leader_on_lane(i), &idm, self.cfg.a_min, self.cfg.a_max)
            })
            .collect();
        let prev: Vec<f64> = self.vehicles.iter().map(|v| v.pos_m).collect();
        self.integrate(&accels);
        let (l1, l2, l, right) = (
            self.cfg.ramp1_pos_m,
            self.cfg.ramp2_pos_m,
            self.cfg.highway_length_m,
            self.cfg.rightmost_lane(),
        );
        for (v, p0) in self.vehicles.iter_mut().zip(prev) {
            let crossed = |x: f64| p0 < x && v.pos_m >= x;
            let route = match v.kind {
                VehicleKind::AvRamp1 if v.lane == right && crossed(l1) => Some(ExitRoute::Ramp1),
                VehicleKind::AvRamp2 if v.lane == right && crossed(l2) => Some(ExitRoute::Ramp2),
                _ if v.pos_m >= l => Some(ExitRoute::Main),
                _ => None,
            };
            if let Some(r) = route {
                v.alive = false;
                events.exits.push((v.id, r));
            }
        }
        self.vehicles.retain(|v| v.alive);
    }

    fn step_figure_eight(&mut self, actions: &BTreeMap<VehicleId, AvAction>, events: &mut SimEvents) {
        let g = self.geometry.expect("figure-eight geometry");
        let yielding = right_of_way_controller(&self.vehicles, &self.cfg);
        let accels: Vec<f64> = (0..self.vehicles.len())
            .map(|i| {
                let v = &self.vehicles[i];
                if let Some(AvAction::Accel(a)) = actions.get(&v.id) {
                    return a.clamp(self.cfg.a_min, self.cfg.a_max);
                }
                let idm = self.cfg.idm_for(v.kind);
                let mut a = idm_acceleration(v.speed_mps, self.leader_on_loop(i, &g), &idm, self.cfg.a_min, self.cfg.a_max);
                if let Some(vl) = yielding.iter().find(|vl| vl.vehicle == v.id) {
                    let stop = Leader { speed: 0.0, gap: vl.gap_m };
                    a = a.min(idm_acceleration(v.speed_mps, Some(stop), &idm, self.cfg.a_min, self.cfg.a_max));
                }
                a
            })
            .collect();
        self.integrate(&accels);
        for v in &mut self.vehicles {
            v.pos_m = g.wrap(v.pos_m);
        }
        let _ = events;
    }

    fn integrate(&mut self, accels: &[f64]) {
        let dt = self.cfg.dt_s;
        for (v, a) in self.vehicles.iter_mut().zip(accels) {
            let limit = self.cfg.speed_limit(v.kind);
            v.pos_m += v.speed_mps * dt;
            v.speed_mps = (v.speed_mps + a * dt).clamp(0.0, limit);
        }
    }

    fn resolve_collisions(&mut self, events: &mut SimEvents) {
        let pairs = detect_collisions(&self.vehicles, &self.cfg);
        events.collisions += pairs.len();
        let mut removed: Vec<VehicleId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        removed.sort_unstable();
        removed.dedup();
        for v in &mut self.vehicles {
            if removed.binary_search(&v.id).is_ok() {
                v.alive = false;
            }
        }
        events.removed.extend(removed);
        self.vehicles.retain(|v| v.alive);
    }

    /// Route-derived lateral intention for AVs on the highway.
    fn update_intentions(&mut self) {
        let (l1, l2, right) = (self.cfg.ramp1_pos_m, self.cfg.ramp2_pos_m, self.cfg.rightmost_lane());
        for v in self.vehicles.iter_mut().filter(|v| v.kind.is_av()) {
            v.intention = route_intention(v.kind, v.lane, v.pos_m, l1, l2, right);
        }
    }
}

/// The lateral move an AV's route calls for: Ramp 1 vehicles head for the
/// rightmost lane before L1; Ramp 2 vehicles keep off the rightmost lane
/// before L1 and head right between L1 and L2.
pub fn route_intention(kind: VehicleKind, lane: usize, pos: f64, l1: f64, l2: f64, rightmost: usize) -> Intention {
    match kind {
        VehicleKind::AvRamp1 if pos < l1 && lane < rightmost => LaneCommand::Right,
        VehicleKind::AvRamp2 if pos < l1 && lane == rightmost && rightmost > 0 => LaneCommand::Left,
        VehicleKind::AvRamp2 if pos >= l1 && pos < l2 && lane < rightmost => LaneCommand::Right,
        _ => LaneCommand::Straight,
    }
}
