//! JSON-lines vehicle trace: one record per vehicle per physics step.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{AvAction, SimEvents, VehicleId, VehicleKind, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub vehicle_id: VehicleId,
    pub kind: VehicleKind,
    pub lane: usize,
    pub pos_m: f64,
    pub speed_mps: f64,
    pub action: Option<AvAction>,
    pub collisions: usize,
    pub lane_changes: usize,
    pub exits: usize,
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    /// Writes the post-step state of every vehicle.
    pub fn record(
        &mut self,
        step: usize,
        vehicles: &[VehicleState],
        actions: &std::collections::BTreeMap<VehicleId, AvAction>,
        events: &SimEvents,
    ) -> io::Result<()> {
        for v in vehicles {
            let rec = TraceRecord {
                step,
                vehicle_id: v.id,
                kind: v.kind,
                lane: v.lane,
                pos_m: v.pos_m,
                speed_mps: v.speed_mps,
                action: actions.get(&v.id).copied(),
                collisions: events.collisions,
                lane_changes: events.lane_changes_by_avs,
                exits: events.exits.len(),
            };
            serde_json::to_writer(&mut self.out, &rec)?;
            self.out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
