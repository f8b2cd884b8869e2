//! Intelligent driver model car following.

use super::IdmParams;

/// The vehicle directly ahead as seen by a follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub speed: f64,
    /// Bumper-to-bumper gap (m).
    pub gap: f64,
}

/// IDM acceleration clamped to `[a_min, a_max]`.
///
/// `a·[1 − (v/v0)^δ − (s*/s)²]` with desired gap
/// `s* = s0 + max(0, v·T + v·Δv / (2√(a·b)))`. A non-positive gap to an
/// existing leader is an imminent collision and yields `a_min`.
pub fn idm_acceleration(v: f64, leader: Option<Leader>, p: &IdmParams, a_min: f64, a_max: f64) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = match leader {
        None => 0.0,
        Some(l) if l.gap <= 0.0 => return a_min,
        Some(l) => {
            let dv = v - l.speed;
            let dynamic = v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
            let s_star = p.min_gap + dynamic.max(0.0);
            (s_star / l.gap).powi(2)
        }
    };
    (p.max_accel * (free - interaction)).clamp(a_min, a_max)
}

/// Gap a follower at `v` needs behind a leader at `v_lead` to stop in time
/// under maximal braking `a_min`, plus the IDM jam distance and headway.
pub fn safe_following_gap(v: f64, v_lead: f64, p: &IdmParams, a_min: f64) -> f64 {
    let brake = (v * v - v_lead * v_lead).max(0.0) / (2.0 * a_min.abs());
    p.min_gap + v * p.time_headway + brake
}
