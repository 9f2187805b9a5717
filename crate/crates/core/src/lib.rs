//! Conflict-aware client selection for multi-server federated learning.
//!
//! * [`hmm`] predicts per-client conflict risk from sparse selection histories.
//! * [`nn`] is the small MLP substrate used by the agents and the task model.
//! * [`sac`] holds the per-server soft actor-critic selector.
//! * [`env`] simulates geometry, channels, bandwidth allocation and conflicts.
//! * [`fl`] implements data partitioning, local SGD and FedAvg aggregation.
//! * [`orchestrator`] wires everything into seeded experiment runs.

pub mod env;
pub mod error;
pub mod fl;
pub mod hmm;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod sac;

pub use error::{Error, Result};
