//! Deterministic multi-agent PRB slicing engine.
//!
//! Every slice is managed by one agent. Agents claim physical resource
//! blocks (PRBs) from a shared pool each timestep; claims that overflow the
//! pool are arbitrated proportionally. Two learners are provided:
//!
//! - [`trainer::Algo::GcnAttention`]: an MLP state encoder, two graph
//!   convolutions with multi-head dot-product attention over a k-nearest
//!   neighbour communication graph and a dense-connected Q head, trained by
//!   deep Q-learning with a next-state attention KL regulariser.
//! - [`trainer::Algo::CoopMarl`]: the all-to-all baseline where every agent
//!   sees the mean encoding of every other agent.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration and the
//! command line live in the `slicearb` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod domain;
pub mod env;
pub mod graph;
pub mod ingest;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use domain::{
    AllocationDecision, FeatureVector, Observation, RewardMode, ScenarioConfig, ScenarioError, SliceSpec, TrafficClass,
    ValidatedScenario, FEATURE_LEN,
};
pub use graph::{AdjacencyGraph, GraphMode, OverheadLedger};
