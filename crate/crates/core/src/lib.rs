//! Vehicle-to-grid coordination testbed.
//!
//! A seeded hourly grid simulation with a fleet of plug-in EVs, three
//! actor-critic trainers (independent learners, MADDPG, and DT-MADDPG with a
//! simulation-assisted residual critic), a collaborative global model used for
//! short-horizon rollouts, and message accounting over a scale-free network of
//! digital twins.

pub mod comms;
pub mod error;
pub mod global_model;
pub mod grid_env;
pub mod harness;
pub mod learners;
pub mod neural;
pub mod parallel;
pub mod replay;
pub mod reward;
pub mod rng;

pub use error::{Error, Result};
