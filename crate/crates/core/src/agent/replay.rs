//! Prioritized replay over a sum tree.
//!
//! Demonstration transitions occupy the first slots and are never evicted;
//! self-play transitions cycle through the remaining capacity.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::features::StateFeatures;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<StateFeatures>,
    pub action: usize,
    pub reward: f64,
    /// `None` marks a terminal transition.
    pub next: Option<Arc<StateFeatures>>,
    pub is_demo: bool,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        self.next.is_none()
    }
}

/// Binary tree of partial sums over a fixed number of leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = i + self.leaves;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[i + self.leaves]
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Leaf whose cumulative range contains `u`, for `u` in `[0, total)`.
    pub fn find(&self, u: f64) -> usize {
        let mut u = u;
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if u < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    alpha: f64,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    tree: SumTree,
    demo_count: usize,
    cursor: usize,
    max_priority: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    /// Importance weights, normalized so the largest is 1.
    pub weights: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        ReplayBuffer {
            capacity,
            alpha,
            items: Vec::new(),
            priorities: Vec::new(),
            tree: SumTree::new(capacity),
            demo_count: 0,
            cursor: 0,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn demo_count(&self) -> usize {
        self.demo_count
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.priorities[i]
    }

    /// Demonstrations must be added before any self-play transition.
    pub fn push_demo(&mut self, t: Transition) -> Result<()> {
        if self.items.len() > self.demo_count {
            return Err(Error::InvalidArgument(
                "demonstrations must be added before self-play transitions".into(),
            ));
        }
        if self.items.len() >= self.capacity {
            return Err(Error::InvalidArgument(
                "replay buffer is full of demonstrations".into(),
            ));
        }
        self.demo_count += 1;
        self.insert(self.items.len(), t);
        Ok(())
    }

    /// Adds a self-play transition at the current maximum priority, replacing
    /// the oldest self-play transition once full.
    pub fn push_self(&mut self, t: Transition) {
        let room = self.capacity - self.demo_count;
        if room == 0 {
            return;
        }
        let slot = self.demo_count + self.cursor % room;
        self.cursor += 1;
        self.insert(slot, t);
    }

    fn insert(&mut self, slot: usize, t: Transition) {
        let p = self.max_priority;
        if slot == self.items.len() {
            self.items.push(t);
            self.priorities.push(p);
        } else {
            self.items[slot] = t;
            self.priorities[slot] = p;
        }
        self.tree.set(slot, p.powf(self.alpha));
    }

    /// Sets each priority to `|td| + eps`.
    pub fn update_priorities(&mut self, indices: &[usize], td_abs: &[f64], eps: f64) {
        for (&i, &d) in indices.iter().zip(td_abs) {
            let p = d.abs() + eps;
            self.priorities[i] = p;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
    }

    /// Draws `batch` indices with replacement, `P(i) ∝ p_i^alpha`.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut ChaCha8Rng) -> Result<Sample> {
        if self.items.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot sample an empty replay buffer".into(),
            ));
        }
        let total = self.tree.total();
        let n = self.items.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = self
                .tree
                .find(rng.gen::<f64>() * total)
                .min(self.items.len() - 1);
            let p = self.tree.get(i) / total;
            indices.push(i);
            weights.push((n * p).powf(-beta));
        }
        let max = weights.iter().copied().fold(0.0, f64::max);
        for w in &mut weights {
            *w /= max;
        }
        Ok(Sample { indices, weights })
    }
}

/// Prioritized sample from `buffer`; see [`ReplayBuffer::sample`].
pub fn sample_prioritized(
    buffer: &ReplayBuffer,
    batch: usize,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    buffer.sample(batch, beta, rng)
}
