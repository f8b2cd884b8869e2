use super::geometry::{Approach, LoopGeometry};
use super::{ScenarioConfig, VehicleId, VehicleState};

/// A stopped obstacle placed at a crossing-zone entry for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualLeader {
    pub vehicle: VehicleId,
    /// Distance from the vehicle's front bumper to the zone entry.
    pub gap_m: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    id: VehicleId,
    gap: f64,
    time: f64,
    inside: bool,
}

/// Right-of-way at the figure-eight crossing: when the front vehicles of both
/// approaches are near the crossing, the one that would arrive later gets a
/// virtual stopped leader at its zone entry. Ties favour the first approach.
pub fn right_of_way_controller(vehicles: &[VehicleState], cfg: &ScenarioConfig) -> Vec<VirtualLeader> {
    let g = LoopGeometry::new(cfg);
    let front = |a: Approach| -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for v in vehicles.iter().filter(|v| v.alive) {
            let inside = g.occupies(v.pos_m, a);
            let gap = if inside { 0.0 } else { g.distance_to_zone(v.pos_m, a) };
            if !inside && gap > cfg.approach_range_m {
                continue;
            }
            let time = if inside {
                0.0
            } else if v.speed_mps > 1e-9 {
                gap / v.speed_mps
            } else {
                f64::INFINITY
            };
            let c = Candidate {
                id: v.id,
                gap,
                time,
                inside,
            };
            // the front-most vehicle of an approach is the one closest to the zone
            if best.is_none_or(|b| (c.gap, c.id) < (b.gap, b.id)) {
                best = Some(c);
            }
        }
        best
    };
    let (Some(a), Some(b)) = (front(Approach::First), front(Approach::Second)) else {
        return Vec::new();
    };
    let later = if b.time >= a.time { b } else { a };
    if later.inside {
        return Vec::new();
    }
    vec![VirtualLeader {
        vehicle: later.id,
        gap_m: later.gap,
    }]
}
