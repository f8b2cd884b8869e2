//! Graph encoder against dense oracles, permutation equivariance and dead-slot
//! masking.

#![allow(clippy::needless_range_loop)]

mod common;

use common::criteria::{self, dense, fully_occupied, propagate, rows};
use common::random_obs;
use gcav::nn::{normalized_adjacency, Encoder, EncoderKind, EncoderSpec};
use gcav::rng::{stream_rng, Stream};
use gcav::tensor::{ParamStore, Tensor};
use proptest::prelude::*;

fn no_skip(kind: EncoderKind) -> EncoderSpec {
    EncoderSpec {
        kind,
        layers: vec![7, 4],
        skip_connection: false,
    }
}

#[test]
fn gcn_matches_explicit_normalized_product() {
    let mut rng = stream_rng(5, Stream::Init);
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, "enc", &no_skip(EncoderKind::Gcn), 3, &mut rng);
    let obs = fully_occupied(&mut rng, 5, 3);
    let a = rows(&obs.adjacency);
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let a_hat: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..5).map(|j| a[i][j] / (deg[i].sqrt() * deg[j].sqrt())).collect())
        .collect();
    let w: Vec<Vec<Vec<f64>>> = enc.params().iter().map(|&p| rows(store.get(p))).collect();
    let h1: Vec<Vec<f64>> = dense(&dense(&a_hat, &rows(&obs.node_features)), &w[0])
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let want = dense(&dense(&a_hat, &h1), &w[1]);
    let got = propagate(&enc, &store, &obs);
    for i in 0..5 {
        for j in 0..4 {
            assert!((got.get(i, j) - want[i][j]).abs() < 1e-10);
        }
    }
}

#[test]
fn flat_encoder_ignores_edges() {
    let mut rng = stream_rng(9, Stream::Init);
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, "enc", &no_skip(EncoderKind::Flat), 3, &mut rng);
    let obs = random_obs(&mut rng, 6, 3, 2);
    let mut isolated = obs.clone();
    isolated.adjacency = Tensor::matrix(6, 6, (0..36).map(|k| if k % 7 == 0 && obs.occupancy[k / 6] { 1.0 } else { 0.0 }).collect());
    assert_eq!(propagate(&enc, &store, &obs), propagate(&enc, &store, &isolated));
}

#[test]
fn normalized_adjacency_of_a_pair() {
    let a = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
    let n = normalized_adjacency(&a);
    assert!(n.data().iter().all(|&v| (v - 0.5).abs() < 1e-15), "{n:?}");
}

#[test]
fn gcn_is_permutation_equivariant_and_degenerates_to_dense() {
    match criteria::gcn_correctness() {
        Ok(summary) => println!("{summary}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn dead_slots_change_nothing() {
    match criteria::dead_slot_masking() {
        Ok(summary) => println!("{summary}"),
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #[test]
    fn normalized_adjacency_is_symmetric_with_bounded_entries(seed in 0u64..10_000, n in 1usize..10) {
        let mut rng = stream_rng(seed, Stream::Init);
        let obs = random_obs(&mut rng, n, 2, 0);
        let a = normalized_adjacency(&obs.adjacency);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a.get(i, j), a.get(j, i));
                prop_assert!((0.0..=1.0).contains(&a.get(i, j)));
            }
            if !obs.occupancy[i] {
                prop_assert!(a.row(i).iter().all(|&v| v == 0.0));
            }
        }
    }
}
