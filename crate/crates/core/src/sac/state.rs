use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A server's local observation, stored as the normalized feature vector
/// `[latency / L_max ..., conflict_prob ...]` over its coverage set in
/// canonical client order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    features: Vec<f64>,
}

impl AgentState {
    pub fn num_candidates(&self) -> usize {
        self.features.len() / 2
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn scaled_latencies(&self) -> &[f64] {
        &self.features[..self.num_candidates()]
    }

    pub fn conflict_probs(&self) -> &[f64] {
        &self.features[self.num_candidates()..]
    }

    /// Rebuilds a state from a previously encoded feature vector.
    pub fn from_features(features: Vec<f64>) -> Result<Self> {
        if !features.len().is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "feature vector of odd length {}",
                features.len()
            )));
        }
        Ok(AgentState { features })
    }
}

/// Scales latencies by `1 / l_max` and appends the conflict probabilities.
pub fn encode_state(latencies: &[f64], conflict_probs: &[f64], l_max: f64) -> Result<AgentState> {
    if latencies.len() != conflict_probs.len() {
        return Err(Error::DimensionMismatch {
            expected: latencies.len(),
            got: conflict_probs.len(),
        });
    }
    if !(l_max > 0.0) {
        return Err(Error::InvalidParams(format!("L_max {l_max} must be positive")));
    }
    if latencies.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidParams("latencies must be finite and non-negative".into()));
    }
    if conflict_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidParams("conflict probabilities must lie in [0, 1]".into()));
    }
    let features = latencies
        .iter()
        .map(|l| l / l_max)
        .chain(conflict_probs.iter().copied())
        .collect();
    Ok(AgentState { features })
}
