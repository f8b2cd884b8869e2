//! Gap-acceptance lane changing for human-driven vehicles.
//!
//! A vehicle moves to an adjacent lane when the gap to the leader there beats
//! the current leader gap by a hysteresis margin and the new follower keeps a
//! safe gap `s0 + v_follower·T`.

use super::{IdmParams, LaneCommand, VehicleState};

/// Leader/follower gaps seen in one lane. `None` means nobody there.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneGaps {
    pub leader_gap: Option<f64>,
    pub follower_gap: Option<f64>,
    pub follower_speed: f64,
}

/// Gaps in the current lane and the lanes to each side. A side is `None`
/// when it would be off the road.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Neighborhood {
    pub current: LaneGaps,
    pub left: Option<LaneGaps>,
    pub right: Option<LaneGaps>,
}

impl Neighborhood {
    /// Measures gaps around `ego` among `others` on a multi-lane straight road.
    /// Lane 0 is the leftmost lane.
    pub fn measure(ego: &VehicleState, others: &[VehicleState], lane_count: usize, length: f64) -> Self {
        let gaps_in = |lane: usize| {
            let mut g = LaneGaps::default();
            for o in others.iter().filter(|o| o.id != ego.id && o.alive && o.lane == lane) {
                if o.pos_m >= ego.pos_m {
                    let gap = o.pos_m - length - ego.pos_m;
                    if g.leader_gap.is_none_or(|cur| gap < cur) {
                        g.leader_gap = Some(gap);
                    }
                } else {
                    let gap = ego.pos_m - length - o.pos_m;
                    if g.follower_gap.is_none_or(|cur| gap < cur) {
                        g.follower_gap = Some(gap);
                        g.follower_speed = o.speed_mps;
                    }
                }
            }
            g
        };
        Self {
            current: gaps_in(ego.lane),
            left: (ego.lane > 0).then(|| gaps_in(ego.lane - 1)),
            right: (ego.lane + 1 < lane_count).then(|| gaps_in(ego.lane + 1)),
        }
    }
}

pub fn hv_lane_change_decision(nb: &Neighborhood, idm: &IdmParams, hysteresis_m: f64) -> LaneCommand {
    let current = nb.current.leader_gap.unwrap_or(f64::INFINITY);
    let acceptable = |g: &LaneGaps| {
        let lead = g.leader_gap.unwrap_or(f64::INFINITY);
        let incentive = lead > current + hysteresis_m;
        let leader_ok = g.leader_gap.is_none_or(|gap| gap >= idm.min_gap);
        let follower_ok = g
            .follower_gap
            .is_none_or(|gap| gap >= idm.min_gap + g.follower_speed * idm.time_headway);
        (incentive && leader_ok && follower_ok).then_some(lead)
    };
    let left = nb.left.as_ref().and_then(acceptable);
    let right = nb.right.as_ref().and_then(acceptable);
    match (left, right) {
        (Some(l), Some(r)) if r > l => LaneCommand::Right,
        (Some(_), _) => LaneCommand::Left,
        (None, Some(_)) => LaneCommand::Right,
        (None, None) => LaneCommand::Straight,
    }
}
