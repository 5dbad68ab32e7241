use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::networks::{ACTION_SIZE, OBSERVATION_SIZE};

/// One stored step. Observations are normalized; the action is in the
/// tanh codomain `[−1, 1]³`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; OBSERVATION_SIZE],
    pub action: [f64; ACTION_SIZE],
    pub reward: f64,
    pub next_obs: [f64; OBSERVATION_SIZE],
    pub terminal: bool,
}

/// Fixed-capacity FIFO store of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    // Slot that the next push overwrites once the buffer is full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Storage indices of a uniform sample without replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        let n = batch.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(batch, rng).into_iter().map(|i| &self.items[i]).collect()
    }

    pub fn get(&self, storage_index: usize) -> Option<&Transition> {
        self.items.get(storage_index)
    }
}
