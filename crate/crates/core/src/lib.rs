//! Desk-scale laboratory for model-based offline reinforcement learning.
//!
//! The library trains dynamics models whose loss is augmented with a
//! value-inconsistency penalty — the squared gap between the value function
//! implied by the data and the one implied by the model — and verifies the
//! analytic gradient of that penalty against exact linear-algebra oracles on
//! tabular problems. A small pessimistic actor-critic planner turns trained
//! models into policies, and the `study` module packages the comparison
//! experiments.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod mdp;
pub mod net;
pub mod oracle;
pub mod planner;
pub mod regulator;
pub mod rng;
pub mod study;
pub mod training;
pub mod value;

pub use error::{Error, Result};
