//! Graph observations: node features, adjacency and the slot index.
//!
//! Slots are fixed per vehicle class: HVs occupy `0..m`, AVs `m..m+n`. A
//! slot with no alive vehicle has all-zero feature and adjacency rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::{LoopGeometry, Scenario, ScenarioConfig, VehicleId, VehicleState};
use crate::tensor::Tensor;

pub const HIGHWAY_FEATURES: usize = 8;
pub const FIGURE_EIGHT_FEATURES: usize = 2;

pub fn feature_width(scenario: Scenario) -> usize {
    match scenario {
        Scenario::HighwayRamping => HIGHWAY_FEATURES,
        Scenario::FigureEight => FIGURE_EIGHT_FEATURES,
    }
}

/// Edge rules: self-loops, AV–AV links regardless of distance and AV–HV
/// links within the sensing range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingModel {
    pub sensing_range_m: f64,
}

impl SensingModel {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            sensing_range_m: cfg.sensing_range_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphObservation {
    pub node_features: Tensor,
    pub adjacency: Tensor,
    /// Presence vector; only present for open-loop scenarios.
    pub index: Option<Vec<f64>>,
    /// Which slots hold an alive vehicle, for every scenario.
    pub occupancy: Vec<bool>,
    pub slot_to_vehicle: BTreeMap<usize, VehicleId>,
    /// First AV slot (`m`).
    pub first_av_slot: usize,
}

impl GraphObservation {
    pub fn slot_count(&self) -> usize {
        self.occupancy.len()
    }

    /// Occupancy as 0/1 weights.
    pub fn occupancy_weights(&self) -> Vec<f64> {
        self.occupancy.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect()
    }

    /// 0/1 weights of the occupied AV slots: the slots that act and learn.
    pub fn av_weights(&self) -> Vec<f64> {
        self.occupancy
            .iter()
            .enumerate()
            .map(|(s, &o)| if o && s >= self.first_av_slot { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn occupied_av_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (self.first_av_slot..self.slot_count()).filter(|&s| self.occupancy[s])
    }
}

/// Node feature rows. Highway: `[v/v_max, x/L, lane one-hot, intention
/// one-hot]`. Figure-eight: `[v/v_max, signed distance from the crossing / ℓ]`.
pub fn build_node_features(states: &[VehicleState], cfg: &ScenarioConfig) -> Tensor {
    let slots = cfg.slot_count();
    let width = feature_width(cfg.scenario);
    let mut feats = Tensor::zeros(slots, width);
    let geom = (cfg.scenario == Scenario::FigureEight).then(|| LoopGeometry::new(cfg));
    for v in states.iter().filter(|v| v.alive) {
        let speed = v.speed_mps / cfg.speed_limit(v.kind);
        let row = &mut feats.data_mut()[v.slot * width..(v.slot + 1) * width];
        row[0] = speed;
        match &geom {
            None => {
                let x = v.pos_m / cfg.highway_length_m;
                debug_assert!((0.0..=1.0).contains(&speed) && (0.0..=1.0).contains(&x));
                row[1] = x;
                row[2 + v.lane.min(2)] = 1.0;
                row[5 + v.intention.index()] = 1.0;
            }
            Some(g) => row[1] = g.signed_from_crossing(v.pos_m) / g.length,
        }
    }
    feats
}

fn separation(a: &VehicleState, b: &VehicleState, geom: Option<&LoopGeometry>) -> f64 {
    match geom {
        None => (a.pos_m - b.pos_m).abs(),
        Some(g) => {
            let d = g.ahead(a.pos_m, b.pos_m);
            d.min(g.length - d)
        }
    }
}

pub fn build_adjacency(states: &[VehicleState], sensing: SensingModel, cfg: &ScenarioConfig) -> Tensor {
    let slots = cfg.slot_count();
    let mut adj = Tensor::zeros(slots, slots);
    let geom = (cfg.scenario == Scenario::FigureEight).then(|| LoopGeometry::new(cfg));
    let alive: Vec<&VehicleState> = states.iter().filter(|v| v.alive).collect();
    for (i, a) in alive.iter().enumerate() {
        adj.set(a.slot, a.slot, 1.0);
        for b in &alive[i + 1..] {
            let linked = match (a.kind.is_av(), b.kind.is_av()) {
                (true, true) => true,
                (false, false) => false,
                _ => separation(a, b, geom.as_ref()) <= sensing.sensing_range_m,
            };
            if linked {
                adj.set(a.slot, b.slot, 1.0);
                adj.set(b.slot, a.slot, 1.0);
            }
        }
    }
    adj
}

/// Occupancy vector of the open-loop scenario.
///
/// # Panics
/// If two alive vehicles share a slot or a slot is out of range.
pub fn build_index(states: &[VehicleState], cfg: &ScenarioConfig) -> Vec<f64> {
    let mut index = vec![0.0; cfg.slot_count()];
    for v in states.iter().filter(|v| v.alive) {
        let class_ok = if v.kind.is_av() {
            v.slot >= cfg.max_hvs && v.slot < cfg.slot_count()
        } else {
            v.slot < cfg.max_hvs
        };
        assert!(class_ok, "vehicle {} holds slot {} outside its class range", v.id, v.slot);
        assert!(index[v.slot] == 0.0, "slot {} assigned twice", v.slot);
        index[v.slot] = 1.0;
    }
    index
}

pub fn build_observation(states: &[VehicleState], cfg: &ScenarioConfig) -> GraphObservation {
    let index = build_index(states, cfg);
    let occupancy = index.iter().map(|&x| x == 1.0).collect();
    let slot_to_vehicle = states.iter().filter(|v| v.alive).map(|v| (v.slot, v.id)).collect();
    GraphObservation {
        node_features: build_node_features(states, cfg),
        adjacency: build_adjacency(states, SensingModel::from_config(cfg), cfg),
        index: cfg.scenario.is_open_loop().then_some(index),
        occupancy,
        slot_to_vehicle,
        first_av_slot: cfg.max_hvs,
    }
}

/// Keeps the actions of occupied AV slots, keyed by vehicle id.
pub fn mask_actions<T: Copy>(raw_actions: &[T], obs: &GraphObservation) -> BTreeMap<VehicleId, T> {
    assert_eq!(raw_actions.len(), obs.slot_count(), "one action per slot required");
    obs.occupied_av_slots()
        .filter_map(|s| obs.slot_to_vehicle.get(&s).map(|&id| (id, raw_actions[s])))
        .collect()
}
