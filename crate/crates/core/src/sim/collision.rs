use super::geometry::{Approach, LoopGeometry};
use super::{Scenario, ScenarioConfig, VehicleId, VehicleState};

/// All colliding pairs, each pair reported once with the smaller id first.
///
/// Highway: same-lane pairs with bumper gap `|Δpos| − length ≤ 0`.
/// Figure-eight: loop-distance gap `≤ 0`, or one vehicle inside each
/// crossing zone at the same time.
pub fn detect_collisions(vehicles: &[VehicleState], cfg: &ScenarioConfig) -> Vec<(VehicleId, VehicleId)> {
    let alive: Vec<&VehicleState> = vehicles.iter().filter(|v| v.alive).collect();
    let len = cfg.vehicle_length_m;
    let mut pairs = Vec::new();
    let geom = (cfg.scenario == Scenario::FigureEight).then(|| LoopGeometry::new(cfg));
    for (i, a) in alive.iter().enumerate() {
        for b in &alive[i + 1..] {
            let hit = match &geom {
                None => a.lane == b.lane && (a.pos_m - b.pos_m).abs() - len <= 0.0,
                Some(g) => {
                    let d = g.ahead(a.pos_m, b.pos_m);
                    let same_lane = d.min(g.length - d) - len <= 0.0;
                    let crossing = (g.occupies(a.pos_m, Approach::First) && g.occupies(b.pos_m, Approach::Second))
                        || (g.occupies(a.pos_m, Approach::Second) && g.occupies(b.pos_m, Approach::First));
                    same_lane || crossing
                }
            };
            if hit {
                pairs.push((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::VehicleKind;

    fn at(id: u64, lane: usize, pos: f64) -> VehicleState {
        VehicleState::new(id, VehicleKind::Hv, lane, pos, 10.0, id as usize)
    }

    #[test]
    fn three_metre_gap_is_safe() {
        let cfg = ScenarioConfig::highway_ramping();
        assert!(detect_collisions(&[at(1, 0, 50.0), at(2, 0, 58.0)], &cfg).is_empty());
    }

    #[test]
    fn overlapping_bodies_collide() {
        // gap = 54 − 50 − 5 = −1
        let cfg = ScenarioConfig::highway_ramping();
        assert_eq!(detect_collisions(&[at(1, 0, 50.0), at(2, 0, 54.0)], &cfg), vec![(1, 2)]);
        assert!(detect_collisions(&[at(1, 0, 50.0), at(2, 1, 54.0)], &cfg).is_empty());
    }

    #[test]
    fn crossing_conflict_in_figure_eight() {
        let cfg = ScenarioConfig::figure_eight();
        let g = LoopGeometry::new(&cfg);
        let a = at(1, 0, g.center(Approach::First));
        let b = at(2, 0, g.center(Approach::Second));
        assert_eq!(detect_collisions(&[a.clone(), b], &cfg), vec![(1, 2)]);
        let far = at(2, 0, g.center(Approach::Second) + 40.0);
        assert!(detect_collisions(&[a, far], &cfg).is_empty());
    }

    #[test]
    fn loop_wraparound_gap() {
        let cfg = ScenarioConfig::figure_eight();
        let l = cfg.loop_length_m();
        assert_eq!(detect_collisions(&[at(1, 0, l - 1.0), at(2, 0, 2.0)], &cfg), vec![(1, 2)]);
    }
}
