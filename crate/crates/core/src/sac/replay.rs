use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentState;
use crate::error::{Error, Result};

/// One `(s, a, r, s')` tuple. The action is stored as candidate positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AgentState,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_state: AgentState,
    pub done: bool,
}

/// FIFO ring buffer with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Mean stored reward, 0 when empty.
    pub fn mean_reward(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().map(|t| t.reward).sum::<f64>() / self.items.len() as f64
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn store(&mut self, transition: Transition) -> Result<()> {
        if !transition.reward.is_finite() {
            return Err(Error::InvalidParams("transition reward must be finite".into()));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
        Ok(())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Underfilled {
                size: self.items.len(),
                batch,
            });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
