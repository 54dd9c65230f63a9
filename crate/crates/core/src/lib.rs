//! Transition-value reinforcement learning.
//!
//! T-learning learns values `T(s, s')` of state-to-state transitions rather
//! than of state-action pairs, and pairs them with a count-based model
//! policy that searches the action space for actions that make valuable
//! transitions reliably. This crate provides the learner, Q-learning and
//! TD(0) baselines, exact DP oracles, the skill benchmark MDPs and an
//! experiment harness that measures convergence speed.

pub mod environments;
pub mod error;
pub mod experiments;
pub mod learners;
pub mod mdp;
pub mod mdp_file;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod textfmt;

pub use error::{Error, Result};
pub use mdp::{ActionId, Mdp, StateId, StepRecord};
pub use rng::RngStream;
