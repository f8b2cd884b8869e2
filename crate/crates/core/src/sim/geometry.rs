//! Figure-eight loop geometry.
//!
//! The loop is a single lane of length ℓ parameterised by arc position. It
//! starts at the beginning of the first straight crossing segment, so the two
//! passes through the shared crossing are centred at `ℓ_c` and `ℓ_c + ℓ/2`
//! with `ℓ_c = r√2`.

use super::ScenarioConfig;

/// Which pass through the crossing a zone belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Approach {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopGeometry {
    pub length: f64,
    pub zone_len: f64,
    pub vehicle_len: f64,
    centers: [f64; 2],
}

impl LoopGeometry {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let length = cfg.loop_length_m();
        let c1 = cfg.ring_radius_m * std::f64::consts::SQRT_2;
        Self {
            length,
            zone_len: cfg.conflict_zone_m,
            vehicle_len: cfg.vehicle_length_m,
            centers: [c1, c1 + length / 2.0],
        }
    }

    pub fn wrap(&self, pos: f64) -> f64 {
        let p = pos.rem_euclid(self.length);
        if p >= self.length {
            0.0
        } else {
            p
        }
    }

    /// Forward distance from `from` to `to` along the loop, in `[0, ℓ)`.
    pub fn ahead(&self, from: f64, to: f64) -> f64 {
        self.wrap(to - from)
    }

    pub fn center(&self, a: Approach) -> f64 {
        match a {
            Approach::First => self.centers[0],
            Approach::Second => self.centers[1],
        }
    }

    pub fn zone_start(&self, a: Approach) -> f64 {
        self.wrap(self.center(a) - self.zone_len / 2.0)
    }

    /// True when a body `[pos − len, pos]` overlaps the zone of `a`.
    pub fn occupies(&self, pos: f64, a: Approach) -> bool {
        self.ahead(self.zone_start(a), pos) < self.zone_len + self.vehicle_len
    }

    /// Distance from the front bumper to the entry of zone `a`.
    pub fn distance_to_zone(&self, pos: f64, a: Approach) -> f64 {
        self.ahead(pos, self.zone_start(a))
    }

    /// Signed loop distance from the first crossing centre, in `[−ℓ/2, ℓ/2)`.
    pub fn signed_from_crossing(&self, pos: f64) -> f64 {
        self.wrap(pos - self.centers[0] + self.length / 2.0) - self.length / 2.0
    }
}
