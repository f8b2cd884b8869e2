pub mod config;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod reward;
pub mod rl;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod validate;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/traffic.md")]
    struct Traffic;
    #[doc = include_str!("../../../book/src/graphs.md")]
    struct Graphs;
    #[doc = include_str!("../../../book/src/agents.md")]
    struct Agents;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
