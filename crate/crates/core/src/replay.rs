//! Circular replay buffer with uniform sampling. Every transition carries the index
//! `z` of the sub-policy that generated it; the discriminator trains on that label.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::ndmath::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub z: usize,
}

/// A sampled minibatch in matrix form, one row per transition.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminals: Vec<bool>,
    pub z: Vec<usize>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let states = Matrix::from_rows(&items.iter().map(|t| &t.state[..]).collect::<Vec<_>>())?;
        let actions = Matrix::from_rows(&items.iter().map(|t| &t.action[..]).collect::<Vec<_>>())?;
        let next_states =
            Matrix::from_rows(&items.iter().map(|t| &t.next_state[..]).collect::<Vec<_>>())?;
        Ok(Self {
            states,
            actions,
            next_states,
            rewards: items.iter().map(|t| t.reward).collect(),
            terminals: items.iter().map(|t| t.terminal).collect(),
            z: items.iter().map(|t| t.z).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    ensemble_size: usize,
    items: Vec<Transition>,
    /// Slot the next push writes once the buffer is full.
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize, ensemble_size: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            ensemble_size,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
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

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.state_dim {
            return Err(shape_err("transition state", self.state_dim, t.state.len()));
        }
        if t.next_state.len() != self.state_dim {
            return Err(shape_err("transition next_state", self.state_dim, t.next_state.len()));
        }
        if t.action.len() != self.action_dim {
            return Err(shape_err("transition action", self.action_dim, t.action.len()));
        }
        if t.z >= self.ensemble_size {
            return Err(Error::Label {
                label: t.z,
                classes: self.ensemble_size,
            });
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
        Ok(())
    }

    fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 || self.items.is_empty() {
            return Err(Error::NotReady(format!(
                "cannot draw {batch_size} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    /// True once a minibatch of `batch_size` distinct slots could be drawn.
    pub fn ready(&self, batch_size: usize) -> bool {
        self.items.len() >= batch_size
    }

    /// Uniform sampling with replacement. Fails only on an empty buffer.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    /// Same draws as [`ReplayBuffer::sample`], packed into matrices.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&picked)
    }

    /// Oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// The `n` most recent transitions, oldest first.
    pub fn recent(&self, n: usize) -> Vec<&Transition> {
        let skip = self.items.len().saturating_sub(n);
        self.iter_chronological().skip(skip).collect()
    }

    /// Physical slot order and write cursor, for checkpointing.
    pub fn raw_parts(&self) -> (&[Transition], usize) {
        (&self.items, self.next)
    }

    pub fn from_raw_parts(
        capacity: usize,
        state_dim: usize,
        action_dim: usize,
        ensemble_size: usize,
        items: Vec<Transition>,
        next: usize,
    ) -> Result<Self> {
        if items.len() > capacity || (next != 0 && next >= capacity) {
            return Err(Error::Format("replay buffer slots exceed capacity".into()));
        }
        let mut buf = Self::new(capacity, state_dim, action_dim, ensemble_size);
        for t in items {
            buf.push(t).map_err(|e| Error::Format(format!("replay buffer entry: {e}")))?;
        }
        buf.next = next;
        Ok(buf)
    }
}
