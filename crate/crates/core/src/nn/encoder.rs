use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{xavier_uniform, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::validate::{ensure, Violation};

use super::{Grad, ObsBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Flat,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Flat => "flat",
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The `encoder` configuration section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Output width of each layer; ReLU between layers, none after the last.
    pub layers: Vec<usize>,
    /// Append each node's raw features to its embedding.
    pub skip_connection: bool,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Gcn,
            layers: vec![32, 32],
            skip_connection: true,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<(), Violation> {
        ensure(!self.layers.is_empty(), "layers", "at least one layer is required")?;
        ensure(self.layers.iter().all(|&w| w > 0), "layers", "widths must be positive")
    }

    pub fn output_width(&self, input_width: usize) -> usize {
        let last = *self.layers.last().expect("validated");
        if self.skip_connection {
            last + input_width
        } else {
            last
        }
    }
}

/// `D^(−1/2) A D^(−1/2)` with `D_ii = Σ_j A_ij`; zero-degree rows stay zero.
///
/// # Panics
/// If `adjacency` is not square and symmetric.
pub fn normalized_adjacency(adjacency: &Tensor) -> Tensor {
    let n = adjacency.rows();
    assert_eq!(n, adjacency.cols(), "adjacency must be square");
    let a = adjacency.data();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a[i * n..(i + 1) * n].iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            assert!(a[i * n + j] == a[j * n + i], "adjacency must be symmetric");
            out[i * n + j] = inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
        }
    }
    Tensor::matrix(n, n, out)
}

/// Graph convolution stack, or the flat per-slot baseline with identical
/// weights where the propagation matrix is `diag(occupancy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    kind: EncoderKind,
    weights: Vec<ParamId>,
    skip: bool,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        spec: &EncoderSpec,
        input_width: usize,
        rng: &mut R,
    ) -> Self {
        let mut fan_in = input_width;
        let weights = spec
            .layers
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let id = store.insert(format!("{prefix}.layer{k}.weight"), xavier_uniform(fan_in, w, rng));
                fan_in = w;
                id
            })
            .collect();
        Self {
            kind: spec.kind,
            weights,
            skip: spec.skip_connection,
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weights.clone()
    }

    /// Node embeddings, `B·S × F_out`, with the raw features in front when
    /// the skip connection is on.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &ObsBatch, grad: Grad) -> Result<Var<'t>, TensorError> {
        let x = tape.constant(&batch.features);
        let z = self.propagate(tape, store, batch, x, grad)?;
        if self.skip {
            x.concat_cols(z)
        } else {
            Ok(z)
        }
    }

    /// The convolution stack alone: `σ(P … σ(P X W_0) … W_k)` where `P` is the
    /// normalized adjacency (GCN) or `diag(occupancy)` (flat).
    pub fn propagate<'t>(&self, tape: &'t Tape, store: &ParamStore, batch: &ObsBatch, x: Var<'t>, grad: Grad) -> Result<Var<'t>, TensorError> {
        let blocks = match self.kind {
            EncoderKind::Gcn => batch.adjacency_blocks.clone(),
            EncoderKind::Flat => batch.occupancy_blocks.clone(),
        };
        let mut h = x;
        for (k, &w) in self.weights.iter().enumerate() {
            h = h
                .block_matmul(blocks.clone(), batch.slots, batch.slots)?
                .matmul(grad.var(tape, store, w))?;
            if k + 1 < self.weights.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Embeddings of a single observation batch without recording gradients.
    pub fn embed(&self, store: &ParamStore, batch: &ObsBatch) -> Tensor {
        let tape = Tape::new();
        self.forward(&tape, store, batch, Grad::Frozen).expect("encoder shapes").value()
    }
}

/// Mean embedding over occupied slots per sample, `B × F`; zero when a
/// sample has no occupied slot.
pub fn pool_global<'t>(z: Var<'t>, batch: &ObsBatch) -> Result<Var<'t>, TensorError> {
    z.block_matmul(batch.pool_blocks.clone(), 1, batch.slots)
}
