//! Network building blocks on top of the tape: dense stacks, the graph
//! encoder and batched observations.

mod batch;
mod encoder;

pub use batch::ObsBatch;
pub use encoder::{normalized_adjacency, pool_global, Encoder, EncoderKind, EncoderSpec};

use rand::Rng;

use crate::tensor::{xavier_uniform, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Whether a forward pass records parameters for training or reads them as
/// constants (target networks, acting).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grad {
    Track,
    Frozen,
}

impl Grad {
    pub fn var<'t>(self, tape: &'t Tape, store: &ParamStore, id: ParamId) -> Var<'t> {
        match self {
            Grad::Track => tape.param(store, id),
            Grad::Frozen => tape.frozen(store, id),
        }
    }
}

/// Dense stack `x → relu(xW₀ + b₀) → … → xWₖ + bₖ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// `dims` lists every width from input to output, e.g. `[32, 32, 3]`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let weight = store.insert(format!("{prefix}.layer{k}.weight"), xavier_uniform(w[0], w[1], rng));
                let bias = store.insert(format!("{prefix}.layer{k}.bias"), Tensor::zeros(1, w[1]));
                (weight, bias)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, grad: Grad) -> Result<Var<'t>, TensorError> {
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(grad.var(tape, store, w))?.add_row(grad.var(tape, store, b))?;
            if k + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Sets the last layer's weights to `scale` times their value; small
    /// output layers keep initial policies near uniform.
    pub fn scale_output(&self, store: &mut ParamStore, scale: f64) {
        let (w, _) = *self.layers.last().expect("non-empty");
        store.get_mut(w).data_mut().iter_mut().for_each(|x| *x *= scale);
    }
}
