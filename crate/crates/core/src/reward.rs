//! Scenario rewards.
//!
//! Highway: `R = w1·R_I + w2·R_AS + w3·P_LC + w4·P_C` with a road-section
//! intention term per AV. Figure-eight: normalized distance of the speed
//! vector from the desired speed.

use serde::{Deserialize, Serialize};

use crate::sim::{ScenarioConfig, SimEvents, VehicleKind, VehicleState, KMH};
use crate::validate::{ensure, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: -0.1,
            w4: -10.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), Violation> {
        for (key, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            ensure(w.is_finite(), key, "must be finite")?;
        }
        ensure(self.w1 >= 0.0, "w1", "must be >= 0")?;
        ensure(self.w2 >= 0.0, "w2", "must be >= 0")?;
        ensure(self.w3 <= 0.0, "w3", "must be <= 0")?;
        ensure(self.w4 <= 0.0, "w4", "must be <= 0")
    }
}

/// The `reward` configuration section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    /// Desired speed V_d of the figure-eight reward.
    pub v_desired_mps: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let w = RewardWeights::default();
        Self {
            w1: w.w1,
            w2: w.w2,
            w3: w.w3,
            w4: w.w4,
            v_desired_mps: 140.0 * KMH,
        }
    }
}

impl RewardConfig {
    pub fn weights(&self) -> RewardWeights {
        RewardWeights {
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
            w4: self.w4,
        }
    }

    pub fn validate(&self) -> Result<(), Violation> {
        self.weights().validate()?;
        ensure(self.v_desired_mps > 0.0 && self.v_desired_mps.is_finite(), "v_desired_mps", "must be positive")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_intention: f64,
    pub r_avg_speed: f64,
    pub p_lane_change: f64,
    pub p_collision: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn combine(r_intention: f64, r_avg_speed: f64, p_lane_change: f64, p_collision: f64, w: &RewardWeights) -> Self {
        Self {
            r_intention,
            r_avg_speed,
            p_lane_change,
            p_collision,
            total: w.w1 * r_intention + w.w2 * r_avg_speed + w.w3 * p_lane_change + w.w4 * p_collision,
        }
    }
}

/// Road-section intention reward for one AV.
///
/// # Panics
/// If `vehicle` is an HV.
pub fn intention_reward(vehicle: &VehicleState, cfg: &ScenarioConfig) -> f64 {
    let (l1, l2) = (cfg.ramp1_pos_m, cfg.ramp2_pos_m);
    let (left, right) = (0, cfg.rightmost_lane());
    let x = vehicle.pos_m;
    match vehicle.kind {
        VehicleKind::Hv => panic!("intention reward is defined for AVs only"),
        VehicleKind::AvRamp1 if x <= l1 => {
            if vehicle.lane == right {
                1.0 - x / l1
            } else if vehicle.lane == left {
                -x / l1
            } else {
                0.0
            }
        }
        VehicleKind::AvRamp2 if x <= l1 => {
            if vehicle.lane == right {
                -x / l1
            } else {
                0.0
            }
        }
        VehicleKind::AvRamp2 if x <= l2 => {
            let progress = (x - l1) / (l2 - l1);
            if vehicle.lane == right {
                1.0 - progress
            } else if vehicle.lane == left {
                -progress
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Mean of `v / v_max_av` over alive AVs; 0 with no AV.
pub fn average_speed_reward(states: &[VehicleState], cfg: &ScenarioConfig) -> f64 {
    let speeds: Vec<f64> = states
        .iter()
        .filter(|v| v.alive && v.kind.is_av())
        .map(|v| v.speed_mps / cfg.v_max_av_mps)
        .collect();
    if speeds.is_empty() {
        0.0
    } else {
        speeds.iter().sum::<f64>() / speeds.len() as f64
    }
}

pub fn highway_reward(states: &[VehicleState], events: &SimEvents, w: &RewardWeights, cfg: &ScenarioConfig) -> RewardBreakdown {
    let intentions: Vec<f64> = states
        .iter()
        .filter(|v| v.alive && v.kind.is_av())
        .map(|v| intention_reward(v, cfg))
        .collect();
    let r_i = if intentions.is_empty() {
        0.0
    } else {
        intentions.iter().sum::<f64>() / intentions.len() as f64
    };
    RewardBreakdown::combine(
        r_i,
        average_speed_reward(states, cfg),
        events.lane_changes_by_avs as f64,
        events.collisions as f64,
        w,
    )
}

/// `max(‖V_d·1‖ − ‖V_d·1 − V‖, 0) / ‖V_d·1‖` over the speed vector of all
/// `m + n` slots. Slots whose vehicle was removed count as speed 0.
pub fn figure_eight_reward(speeds: &[f64], v_desired: f64) -> f64 {
    if speeds.is_empty() {
        return 0.0;
    }
    let ideal = v_desired * (speeds.len() as f64).sqrt();
    let deviation = speeds.iter().map(|v| (v_desired - v).powi(2)).sum::<f64>().sqrt();
    (ideal - deviation).max(0.0) / ideal
}

/// The figure-eight speed vector indexed by slot.
pub fn slot_speeds(states: &[VehicleState], cfg: &ScenarioConfig) -> Vec<f64> {
    let mut speeds = vec![0.0; cfg.slot_count()];
    for v in states.iter().filter(|v| v.alive) {
        speeds[v.slot] = v.speed_mps;
    }
    speeds
}
