use rand::Rng;

use super::geometry::{Approach, LoopGeometry};
use super::idm::safe_following_gap;
use super::{ScenarioConfig, VehicleId, VehicleKind, VehicleState};

/// Bookkeeping that persists between spawn calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spawner {
    next_id: VehicleId,
    next_av_ramp2: bool,
}

impl Default for Spawner {
    fn default() -> Self {
        Self::new()
    }
}

impl Spawner {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            next_av_ramp2: false,
        }
    }

    pub fn fresh_id(&mut self) -> VehicleId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn next_av_kind(&mut self) -> VehicleKind {
        let kind = if self.next_av_ramp2 {
            VehicleKind::AvRamp2
        } else {
            VehicleKind::AvRamp1
        };
        self.next_av_ramp2 = !self.next_av_ramp2;
        kind
    }
}

/// Lowest slot of the class not held by an alive vehicle. HV slots are
/// `0..m`, AV slots `m..m+n`.
pub fn lowest_free_slot(vehicles: &[VehicleState], cfg: &ScenarioConfig, av: bool) -> Option<usize> {
    let range = if av {
        cfg.max_hvs..cfg.max_hvs + cfg.max_avs
    } else {
        0..cfg.max_hvs
    };
    range
        .into_iter()
        .find(|s| !vehicles.iter().any(|v| v.alive && v.slot == *s))
}

/// Bernoulli arrivals at the highway entry, one draw per class per step with
/// probability `inflow·dt`. A class spawns only when below its capacity and
/// some lane has a clear entry; AV routes alternate Ramp 1 / Ramp 2.
pub fn spawn_inflow<R: Rng + ?Sized>(
    vehicles: &[VehicleState],
    cfg: &ScenarioConfig,
    spawner: &mut Spawner,
    rng: &mut R,
) -> Vec<VehicleState> {
    let mut out: Vec<VehicleState> = Vec::new();
    for av in [false, true] {
        let rate = if av { cfg.inflow_av_vps } else { cfg.inflow_hv_vps };
        // the draw happens every step so capacity never shifts the stream
        let arrive = rng.gen::<f64>() < rate * cfg.dt_s;
        let lane_pick: f64 = rng.gen();
        if !arrive {
            continue;
        }
        let all: Vec<VehicleState> = vehicles.iter().chain(out.iter()).cloned().collect();
        let Some(slot) = lowest_free_slot(&all, cfg, av) else {
            continue;
        };
        let kind_probe = if av { VehicleKind::AvRamp1 } else { VehicleKind::Hv };
        let speed = cfg.spawn_speed_mps.min(cfg.speed_limit(kind_probe));
        let idm = cfg.idm_for(kind_probe);
        let clear: Vec<usize> = (0..cfg.lane_count)
            .filter(|&lane| {
                all.iter().filter(|v| v.alive && v.lane == lane).all(|v| {
                    let gap = v.pos_m - cfg.vehicle_length_m;
                    gap >= safe_following_gap(speed, v.speed_mps, &idm, cfg.a_min)
                })
            })
            .collect();
        if clear.is_empty() {
            continue;
        }
        let lane = clear[((lane_pick * clear.len() as f64) as usize).min(clear.len() - 1)];
        let kind = if av { spawner.next_av_kind() } else { VehicleKind::Hv };
        out.push(VehicleState::new(spawner.fresh_id(), kind, lane, 0.0, speed, slot));
    }
    out
}

/// Initial figure-eight population: `m + n` vehicles, HVs and AVs
/// interleaved, evenly spaced with small jitter and starting at rest. The
/// spacing is offset so nobody starts inside a crossing zone.
pub fn figure_eight_population<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    spawner: &mut Spawner,
    rng: &mut R,
) -> Vec<VehicleState> {
    let g = LoopGeometry::new(cfg);
    let total = cfg.slot_count();
    let spacing = g.length / total as f64;
    let jitter = (spacing - cfg.vehicle_length_m - cfg.conflict_zone_m).max(0.0) / 4.0;
    let base = g.center(Approach::First) + spacing / 2.0;
    let (mut hv, mut av) = (0, 0);
    let mut out = Vec::with_capacity(total);
    for k in 0..total {
        let want_av = (k % 2 == 1 && av < cfg.max_avs) || hv >= cfg.max_hvs;
        let (kind, slot) = if want_av {
            av += 1;
            (VehicleKind::AvGeneric, cfg.max_hvs + av - 1)
        } else {
            hv += 1;
            (VehicleKind::Hv, hv - 1)
        };
        let pos = g.wrap(base + k as f64 * spacing + rng.gen_range(-jitter..=jitter));
        out.push(VehicleState::new(spawner.fresh_id(), kind, 0, pos, 0.0, slot));
    }
    out
}
