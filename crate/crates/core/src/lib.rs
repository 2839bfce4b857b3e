//! Simulation and benchmarking stack for Monitored MDPs.
//!
//! A Monitored MDP pairs an environment with a monitor: a second Markov
//! process that decides whether the environment reward is revealed to the
//! agent at each step. This crate provides the tabular environments and
//! monitors used as benchmarks, count-based models, value iteration, the
//! Monitored MBIE-EB agent with its ablations, the Directed-E² baseline, an
//! exact minimax oracle, and a seeded experiment harness.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod model;
pub mod monitor;
pub mod planning;
pub mod rng;

pub use error::{Error, MapError, Result};
pub use mdp::{JointAction, JointState, MonMdp, MonMdpSpec, ProxyReward, SpaceShape, StepOutcome};
