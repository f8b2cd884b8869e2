use serde::{Deserialize, Serialize};

use crate::validate::{ensure, Violation};

use super::VehicleKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    HighwayRamping,
    FigureEight,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::HighwayRamping => "highway_ramping",
            Scenario::FigureEight => "figure_eight",
        }
    }

    /// Open-loop scenarios have a varying vehicle population and carry an
    /// index vector in their observations.
    pub fn is_open_loop(self) -> bool {
        matches!(self, Scenario::HighwayRamping)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Intelligent driver model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Desired time headway (s).
    pub time_headway: f64,
    /// Jam distance (m).
    pub min_gap: f64,
    /// Maximum acceleration (m/s²).
    pub max_accel: f64,
    /// Comfortable deceleration, positive (m/s²).
    pub comfort_decel: f64,
    pub delta: f64,
}

/// IDM section of the scenario config. `v0` defaults to the speed limit of
/// each vehicle kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub delta: f64,
}

impl Default for IdmConfig {
    fn default() -> Self {
        Self {
            v0: None,
            time_headway: 1.0,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 1.5,
            delta: 4.0,
        }
    }
}

impl IdmConfig {
    pub fn params_for(&self, speed_limit: f64) -> IdmParams {
        IdmParams {
            v0: self.v0.unwrap_or(speed_limit),
            time_headway: self.time_headway,
            min_gap: self.min_gap,
            max_accel: self.max_accel,
            comfort_decel: self.comfort_decel,
            delta: self.delta,
        }
    }
}

pub const KMH: f64 = 1.0 / 3.6;

/// Everything the simulator needs to know about one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Maximum number of simultaneous human-driven vehicles (m).
    pub max_hvs: usize,
    /// Maximum number of simultaneous automated vehicles (n).
    pub max_avs: usize,
    pub lane_count: usize,
    pub highway_length_m: f64,
    pub ramp1_pos_m: f64,
    pub ramp2_pos_m: f64,
    pub ring_radius_m: f64,
    pub v_max_hv_mps: f64,
    pub v_max_av_mps: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub inflow_hv_vps: f64,
    pub inflow_av_vps: f64,
    pub dt_s: f64,
    pub decision_period_steps: usize,
    pub sensing_range_m: f64,
    pub vehicle_length_m: f64,
    pub spawn_speed_mps: f64,
    pub lc_hysteresis_m: f64,
    pub conflict_zone_m: f64,
    pub approach_range_m: f64,
    pub idm: IdmConfig,
}

impl ScenarioConfig {
    /// Three-lane highway with two exit ramps.
    pub fn highway_ramping() -> Self {
        Self {
            scenario: Scenario::HighwayRamping,
            max_hvs: 6,
            max_avs: 6,
            lane_count: 3,
            highway_length_m: 200.0,
            ramp1_pos_m: 80.0,
            ramp2_pos_m: 160.0,
            ring_radius_m: 30.0,
            v_max_hv_mps: 60.0 * KMH,
            v_max_av_mps: 75.0 * KMH,
            a_min: -4.5,
            a_max: 3.0,
            inflow_hv_vps: 0.5,
            inflow_av_vps: 0.3,
            dt_s: 0.5,
            decision_period_steps: 2,
            sensing_range_m: 30.0,
            vehicle_length_m: 5.0,
            spawn_speed_mps: 10.0,
            lc_hysteresis_m: 5.0,
            conflict_zone_m: 10.0,
            approach_range_m: 50.0,
            idm: IdmConfig::default(),
        }
    }

    /// Two single-lane rings sharing one crossing.
    pub fn figure_eight() -> Self {
        Self {
            scenario: Scenario::FigureEight,
            lane_count: 1,
            v_max_hv_mps: 100.0 * KMH,
            v_max_av_mps: 100.0 * KMH,
            a_min: -3.0,
            a_max: 3.0,
            inflow_hv_vps: 0.0,
            inflow_av_vps: 0.0,
            decision_period_steps: 1,
            spawn_speed_mps: 0.0,
            ..Self::highway_ramping()
        }
    }

    pub fn preset(scenario: Scenario) -> Self {
        match scenario {
            Scenario::HighwayRamping => Self::highway_ramping(),
            Scenario::FigureEight => Self::figure_eight(),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.max_hvs + self.max_avs
    }

    pub fn speed_limit(&self, kind: VehicleKind) -> f64 {
        if kind.is_av() {
            self.v_max_av_mps
        } else {
            self.v_max_hv_mps
        }
    }

    pub fn idm_for(&self, kind: VehicleKind) -> IdmParams {
        self.idm.params_for(self.speed_limit(kind))
    }

    /// Length of the figure-eight loop: two three-quarter rings joined by two
    /// straight crossing segments of length 2r√2.
    pub fn loop_length_m(&self) -> f64 {
        let r = self.ring_radius_m;
        2.0 * (2.0 * std::f64::consts::PI * r * 0.75 + 2.0 * r * std::f64::consts::SQRT_2)
    }

    pub fn rightmost_lane(&self) -> usize {
        self.lane_count - 1
    }

    pub fn validate(&self) -> Result<(), Violation> {
        ensure(self.max_hvs + self.max_avs > 0, "max_avs", "m + n must be positive")?;
        ensure(self.max_avs > 0, "max_avs", "at least one AV slot is required")?;
        ensure(self.lane_count >= 1, "lane_count", "must be at least 1")?;
        if self.scenario == Scenario::HighwayRamping {
            ensure(self.lane_count == 3, "lane_count", "highway ramping uses 3 lanes")?;
            ensure(self.ramp1_pos_m > 0.0, "ramp1_pos_m", "must be positive")?;
            ensure(self.ramp1_pos_m < self.ramp2_pos_m, "ramp1_pos_m", "L1 < L2 required")?;
            ensure(self.ramp2_pos_m < self.highway_length_m, "ramp2_pos_m", "L2 < L required")?;
            ensure(self.inflow_hv_vps >= 0.0, "inflow_hv_vps", "must be non-negative")?;
            ensure(self.inflow_av_vps >= 0.0, "inflow_av_vps", "must be non-negative")?;
            ensure(self.inflow_hv_vps * self.dt_s <= 1.0, "inflow_hv_vps", "inflow·dt must be ≤ 1")?;
            ensure(self.inflow_av_vps * self.dt_s <= 1.0, "inflow_av_vps", "inflow·dt must be ≤ 1")?;
        } else {
            ensure(self.lane_count == 1, "lane_count", "figure-eight is single lane")?;
            ensure(self.ring_radius_m > 0.0, "ring_radius_m", "must be positive")?;
            let spacing = self.loop_length_m() / self.slot_count() as f64;
            ensure(
                spacing > self.vehicle_length_m + self.idm.min_gap,
                "ring_radius_m",
                "loop too short for m + n vehicles",
            )?;
        }
        ensure(self.a_min < 0.0, "a_min", "a_min < 0 required")?;
        ensure(self.a_max > 0.0, "a_max", "a_max > 0 required")?;
        ensure(self.dt_s > 0.0, "dt_s", "must be positive")?;
        ensure(self.decision_period_steps > 0, "decision_period_steps", "must be positive")?;
        ensure(self.v_max_hv_mps > 0.0, "v_max_hv_mps", "must be positive")?;
        ensure(self.v_max_av_mps > 0.0, "v_max_av_mps", "must be positive")?;
        ensure(self.sensing_range_m > 0.0, "sensing_range_m", "must be positive")?;
        ensure(self.vehicle_length_m > 0.0, "vehicle_length_m", "must be positive")?;
        ensure(self.spawn_speed_mps >= 0.0, "spawn_speed_mps", "must be non-negative")?;
        ensure(self.lc_hysteresis_m >= 0.0, "lc_hysteresis_m", "must be non-negative")?;
        ensure(self.conflict_zone_m > 0.0, "conflict_zone_m", "must be positive")?;
        ensure(self.approach_range_m > 0.0, "approach_range_m", "must be positive")?;
        let idm = &self.idm;
        ensure(idm.time_headway > 0.0, "idm.time_headway", "must be positive")?;
        ensure(idm.min_gap >= 0.0, "idm.min_gap", "must be non-negative")?;
        ensure(idm.max_accel > 0.0, "idm.max_accel", "must be positive")?;
        ensure(idm.comfort_decel > 0.0, "idm.comfort_decel", "must be positive")?;
        ensure(idm.delta > 0.0, "idm.delta", "must be positive")?;
        if let Some(v0) = idm.v0 {
            ensure(v0 > 0.0, "idm.v0", "must be positive")?;
        }
        Ok(())
    }
}
