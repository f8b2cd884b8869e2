use gcav::graph::{build_observation, mask_actions};
use gcav::sim::{Scenario, ScenarioConfig, VehicleKind, VehicleState};
use proptest::prelude::*;

fn highway_states(raw: &[(u8, usize, f64, f64, bool)], cfg: &ScenarioConfig) -> Vec<VehicleState> {
    let (mut hv_slot, mut av_slot) = (0, cfg.max_hvs);
    raw.iter()
        .enumerate()
        .filter_map(|(i, &(k, lane, pos, speed, alive))| {
            let kind = match k % 3 {
                0 => VehicleKind::Hv,
                1 => VehicleKind::AvRamp1,
                _ => VehicleKind::AvRamp2,
            };
            let slot = if kind.is_av() { &mut av_slot } else { &mut hv_slot };
            let limit = if kind.is_av() { cfg.slot_count() } else { cfg.max_hvs };
            if *slot >= limit {
                return None;
            }
            *slot += 1;
            let mut v = VehicleState::new(i as u64, kind, lane % 3, pos * cfg.highway_length_m, speed * cfg.speed_limit(kind), *slot - 1);
            v.alive = alive;
            Some(v)
        })
        .collect()
}

proptest! {
    #[test]
    fn adjacency_follows_the_edge_rules(raw in prop::collection::vec((any::<u8>(), 0usize..3, 0.0f64..1.0, 0.0f64..1.0, prop::bool::weighted(0.8)), 0..14)) {
        let cfg = ScenarioConfig::highway_ramping();
        let states = highway_states(&raw, &cfg);
        let obs = build_observation(&states, &cfg);
        let n = cfg.slot_count();
        let a = &obs.adjacency;
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
            }
            prop_assert_eq!(a.get(i, i) == 1.0, obs.occupancy[i]);
        }
        let alive: Vec<&VehicleState> = states.iter().filter(|v| v.alive).collect();
        for x in &alive {
            for y in &alive {
                if x.id == y.id {
                    continue;
                }
                let want = match (x.kind.is_av(), y.kind.is_av()) {
                    (true, true) => true,
                    (false, false) => false,
                    _ => (x.pos_m - y.pos_m).abs() <= cfg.sensing_range_m,
                };
                prop_assert_eq!(a.get(x.slot, y.slot) == 1.0, want);
            }
        }
        // Dead slots carry nothing.
        for s in (0..n).filter(|&s| !obs.occupancy[s]) {
            prop_assert!(obs.node_features.row(s).iter().all(|&v| v == 0.0));
            prop_assert!(a.row(s).iter().all(|&v| v == 0.0));
        }
        // Occupied highway rows: two one-hot groups and normalized scalars.
        for s in (0..n).filter(|&s| obs.occupancy[s]) {
            let row = obs.node_features.row(s);
            prop_assert_eq!(row[2..5].iter().sum::<f64>(), 1.0);
            prop_assert_eq!(row[5..8].iter().sum::<f64>(), 1.0);
            prop_assert!((0.0..=1.0).contains(&row[0]) && (0.0..=1.0).contains(&row[1]));
        }
        prop_assert_eq!(obs.index.as_ref().map(|i| i.iter().sum::<f64>() as usize), Some(alive.len()));
        // Only alive AVs receive actions.
        let acted = mask_actions(&vec![0u8; n], &obs);
        prop_assert_eq!(acted.len(), alive.iter().filter(|v| v.kind.is_av()).count());
    }
}

#[test]
fn closed_loop_has_no_index() {
    let cfg = ScenarioConfig::preset(Scenario::FigureEight);
    let obs = build_observation(&[], &cfg);
    assert!(obs.index.is_none());
    assert_eq!(obs.slot_count(), cfg.slot_count());
}
