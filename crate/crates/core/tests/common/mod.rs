#![allow(dead_code, clippy::needless_range_loop)]

pub mod criteria;

use std::collections::BTreeMap;
use std::sync::Arc;

use gcav::graph::GraphObservation;
use gcav::rl::{Actions, Transition};
use gcav::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

/// Random observation with `slots` slots of width `width`; slots before
/// `first_av` are human-driven. At least one AV slot is occupied.
pub fn random_obs<R: Rng>(rng: &mut R, slots: usize, width: usize, first_av: usize) -> GraphObservation {
    let mut occupancy: Vec<bool> = (0..slots).map(|_| rng.gen_bool(0.7)).collect();
    let forced = rng.gen_range(first_av..slots);
    occupancy[forced] = true;
    let mut features = Tensor::zeros(slots, width);
    let mut adjacency = Tensor::zeros(slots, slots);
    for i in 0..slots {
        if !occupancy[i] {
            continue;
        }
        for c in 0..width {
            features.set(i, c, rng.gen_range(-1.0..1.0));
        }
        adjacency.set(i, i, 1.0);
        for j in 0..i {
            if occupancy[j] && rng.gen_bool(0.5) {
                adjacency.set(i, j, 1.0);
                adjacency.set(j, i, 1.0);
            }
        }
    }
    let slot_to_vehicle = (0..slots).filter(|&s| occupancy[s]).map(|s| (s, s as u64 + 1)).collect::<BTreeMap<_, _>>();
    GraphObservation {
        node_features: features,
        adjacency,
        index: None,
        occupancy,
        slot_to_vehicle,
        first_av_slot: first_av,
    }
}

pub fn random_transition<R: Rng>(rng: &mut R, slots: usize, width: usize, first_av: usize, actions: Actions) -> Transition {
    let obs = Arc::new(random_obs(rng, slots, width, first_av));
    let next = Arc::new(random_obs(rng, slots, width, first_av));
    Transition::new(obs, actions, rng.gen_range(-1.0..1.0), next, rng.gen_bool(0.1))
}

pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

/// Compares backpropagated gradients of `loss` with central differences on
/// `per_param` random coordinates of each parameter in `params`. Coordinates
/// where the loss has a kink inside the stencil are skipped and counted.
pub fn grad_check<A, R: Rng>(
    owner: &mut A,
    store_mut: impl Fn(&mut A) -> &mut ParamStore,
    params: &[ParamId],
    loss: impl for<'t> Fn(&A, &'t Tape) -> Var<'t>,
    per_param: usize,
    rng: &mut R,
) -> GradReport {
    const H: f64 = 1e-6;
    let tape = Tape::new();
    let l = loss(owner, &tape);
    let f0 = l.item();
    tape.backward(l, store_mut(owner));
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&p| store_mut(owner).get(p).grad().expect("gradient recorded").to_vec())
        .collect();
    let eval = |owner: &A| loss(owner, &Tape::new()).item();
    let mut report = GradReport {
        checked: 0,
        skipped: 0,
        worst: 0.0,
    };
    for (k, &p) in params.iter().enumerate() {
        let n = analytic[k].len();
        for _ in 0..per_param.min(n) {
            let i = rng.gen_range(0..n);
            let orig = store_mut(owner).get(p).data()[i];
            store_mut(owner).get_mut(p).data_mut()[i] = orig + H;
            let up = eval(owner);
            store_mut(owner).get_mut(p).data_mut()[i] = orig - H;
            let down = eval(owner);
            store_mut(owner).get_mut(p).data_mut()[i] = orig;
            if (up - 2.0 * f0 + down).abs() > 1e-9 * f0.abs().max(1.0) {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            report.worst = report.worst.max(rel);
            report.checked += 1;
        }
    }
    report
}
