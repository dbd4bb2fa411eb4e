//! Fixed-capacity FIFO replay buffer with uniform minibatch sampling.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot that the next push overwrites once the buffer is full.
    head: usize,
    pushed: u64,
}

/// Column-stacked minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub action: Array2<f64>,
    pub reward: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Self {
        let n = items.len();
        let mut b = Batch {
            obs: Array2::zeros((n, 3)),
            action: Array2::zeros((n, 2)),
            reward: Array1::zeros(n),
            next_obs: Array2::zeros((n, 3)),
            done: Array1::zeros(n),
        };
        for (i, t) in items.iter().enumerate() {
            for k in 0..3 {
                b.obs[[i, k]] = t.obs[k];
                b.next_obs[[i, k]] = t.next_obs[k];
            }
            for k in 0..2 {
                b.action[[i, k]] = t.action[k];
            }
            b.reward[i] = t.reward;
            b.done[i] = if t.done { 1.0 } else { 0.0 };
        }
        b
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParam("replay capacity must be > 0".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            pushed: 0,
        })
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

    /// Total transitions ever pushed.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        self.pushed += 1;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (a, b) = self.items.split_at(self.head);
        b.iter().chain(a.iter())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::InvalidState("cannot sample an empty replay buffer".into()));
        }
        let len = self.items.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    /// A batch of `n` transitions; needs at least `n` stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if self.items.len() < n {
            return Err(Error::InvalidState(format!(
                "replay buffer holds {} transitions, batch needs {n}",
                self.items.len()
            )));
        }
        let idx = self.sample_indices(n, rng)?;
        let items: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Ok(Batch::from_transitions(&items))
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }
}
