//! Decentralized soft actor-critic client selection.
//!
//! Each server owns one [`SacAgent`]. The policy emits one logit per client
//! in the server's coverage set and subsets are drawn with Plackett–Luce
//! sampling; the twin critics score `(state, selection mask)` pairs.

mod agent;
pub mod plackett_luce;
mod replay;
mod reward;
mod state;

pub use agent::{ActionSubset, ActorEval, CriticEval, SacAgent, SacConfig, SacNetworks, SelectMode, UpdateStats};
pub use replay::{ReplayBuffer, Transition};
pub use reward::{compute_reward, fairness_metric};
pub use state::{encode_state, AgentState};
