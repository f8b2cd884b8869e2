use std::rc::Rc;

use crate::graph::GraphObservation;
use crate::tensor::Tensor;

use super::normalized_adjacency;

/// A batch of observations with slots folded into rows: sample `b`, slot `s`
/// lives in row `b·S + s`.
#[derive(Debug, Clone)]
pub struct ObsBatch {
    pub batch: usize,
    pub slots: usize,
    pub features: Tensor,
    /// Per-sample `D^(−1/2) A D^(−1/2)` blocks, `S × S` each.
    pub adjacency_blocks: Rc<Vec<f64>>,
    /// Per-sample `diag(occupancy)` blocks, used by the flat encoder.
    pub occupancy_blocks: Rc<Vec<f64>>,
    /// Per-sample `1 × S` mean-over-occupied-slots rows.
    pub pool_blocks: Rc<Vec<f64>>,
    /// 0/1 per row: slot holds an alive vehicle.
    pub occupancy: Vec<f64>,
    /// 0/1 per row: slot holds an alive AV.
    pub av_mask: Vec<f64>,
}

impl ObsBatch {
    pub fn new<'a, I>(observations: I) -> Self
    where
        I: IntoIterator<Item = &'a GraphObservation>,
    {
        let obs: Vec<&GraphObservation> = observations.into_iter().collect();
        assert!(!obs.is_empty(), "empty observation batch");
        let slots = obs[0].slot_count();
        let width = obs[0].node_features.cols();
        let mut features = Vec::with_capacity(obs.len() * slots * width);
        let mut adjacency = Vec::with_capacity(obs.len() * slots * slots);
        let mut diag = vec![0.0; obs.len() * slots * slots];
        let mut pool = Vec::with_capacity(obs.len() * slots);
        let mut occupancy = Vec::with_capacity(obs.len() * slots);
        let mut av_mask = Vec::with_capacity(obs.len() * slots);
        for (b, o) in obs.iter().enumerate() {
            assert_eq!(o.slot_count(), slots, "mixed slot counts in batch");
            features.extend_from_slice(o.node_features.data());
            adjacency.extend(normalized_adjacency(&o.adjacency).into_data());
            let occ = o.occupancy_weights();
            let count: f64 = occ.iter().sum();
            for (s, &w) in occ.iter().enumerate() {
                diag[b * slots * slots + s * slots + s] = w;
                pool.push(if count > 0.0 { w / count } else { 0.0 });
            }
            occupancy.extend_from_slice(&occ);
            av_mask.extend(o.av_weights());
        }
        Self {
            batch: obs.len(),
            slots,
            features: Tensor::matrix(obs.len() * slots, width, features),
            adjacency_blocks: Rc::new(adjacency),
            occupancy_blocks: Rc::new(diag),
            pool_blocks: Rc::new(pool),
            occupancy,
            av_mask,
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.slots
    }

    /// Number of occupied AV slots in each sample.
    pub fn av_counts(&self) -> Vec<f64> {
        self.av_mask.chunks(self.slots).map(|c| c.iter().sum()).collect()
    }
}
