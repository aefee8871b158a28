//! Planning, simulation and validation toolkit for privacy-preserving
//! clustered federated unlearning.
//!
//! Users are split into clusters that each train their own model under a
//! pairwise-masking secure aggregation protocol. Removing a user retrains only
//! the affected cluster, and inference takes a majority vote over clusters.
//! The crate covers the whole path:
//!
//! * [`bounds`] derives the cluster size, Shamir threshold and unlearning
//!   capacities from the probabilistic security and correctness targets.
//! * [`analysis`] evaluates retraining-cost and convergence expressions.
//! * [`topology`], [`crypto`] and [`secagg`] implement the in-cluster
//!   aggregation protocol over a Harary communication graph.
//! * [`cohort`] and [`unlearning`] simulate clustering, roles and the
//!   sequential/batch unlearning state machines.
//! * [`fltrain`] is a small convex federated trainer used to exercise exact
//!   retraining-based unlearning end to end.
//! * [`montecarlo`] estimates requirement failure rates and sweeps planning
//!   parameters.
//!
//! The guide under `book/` walks through each of these with runnable
//! snippets; those snippets are compiled and run as doc-tests of this crate.

pub mod analysis;
pub mod bounds;
pub mod cohort;
pub mod crypto;
pub mod fltrain;
pub mod montecarlo;
pub mod rng;
pub mod secagg;
pub mod topology;
pub mod unlearning;

/// Users are identified by their index in `0..N`.
pub type UserId = usize;

/// Clusters are identified by their index in `0..s`.
pub type ClusterId = usize;

pub use bounds::{par_gen, ClusterPlan, SystemParams};

// Every chapter of the guide is a doc-test module so its snippets cannot drift
// from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/capacity.md")]
    mod capacity {}
    #[doc = include_str!("../../../book/src/topology.md")]
    mod topology {}
    #[doc = include_str!("../../../book/src/secure-aggregation.md")]
    mod secure_aggregation {}
    #[doc = include_str!("../../../book/src/unlearning.md")]
    mod unlearning {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/convergence.md")]
    mod convergence {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
}
