//! Central FIFO experience buffer with uniform sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid_env::{GridContext, Observation};
use crate::{Error, Result};

/// One joint experience. `grid`/`next_grid` carry the shared grid fields
/// needed to rebuild a global snapshot for model rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<Observation>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Observation>,
    pub done: Vec<bool>,
    pub grid: GridContext,
    pub next_grid: GridContext,
}

impl Transition {
    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.obs.len();
        if self.actions.len() != n
            || self.rewards.len() != n
            || self.next_obs.len() != n
            || self.done.len() != n
        {
            return Err(Error::ShapeMismatch(format!(
                "transition fields disagree on agent count ({n})"
            )));
        }
        let finite = self
            .actions
            .iter()
            .chain(&self.rewards)
            .chain(self.obs.iter().chain(&self.next_obs).flat_map(|o| o.features()).collect::<Vec<_>>().iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::ShapeMismatch("transition has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    /// Index of the oldest entry once the ring is full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be > 0".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Transition at logical position `i` (0 = oldest).
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.storage.len() {
            return None;
        }
        self.storage.get((self.head + i) % self.storage.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).map(move |i| self.get(i).expect("in range"))
    }

    /// Uniform sample of `k` indices (logical positions), with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len() < k || self.is_empty() {
            return Err(Error::InsufficientSamples {
                have: self.len(),
                need: k.max(1),
            });
        }
        Ok((0..k).map(|_| rng.random_range(0..self.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| self.get(i).expect("in range"))
            .collect())
    }
}
