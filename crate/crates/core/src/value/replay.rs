use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// 0 = no test, 1 = test.
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer of transitions stored in flat arrays.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    dim: usize,
    capacity: usize,
    len: usize,
    head: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

/// A sampled minibatch in row-major layout.
pub struct Batch {
    pub obs: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("replay_capacity", "must be positive"));
        }
        Ok(Self {
            dim,
            capacity,
            len: 0,
            head: 0,
            obs: vec![0.0; capacity * dim],
            next_obs: vec![0.0; capacity * dim],
            actions: vec![0; capacity],
            rewards: vec![0.0; capacity],
            dones: vec![false; capacity],
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) {
        debug_assert_eq!(t.obs.len(), self.dim);
        let i = self.head;
        let d = self.dim;
        self.obs[i * d..(i + 1) * d].copy_from_slice(&t.obs);
        self.next_obs[i * d..(i + 1) * d].copy_from_slice(&t.next_obs);
        self.actions[i] = t.action;
        self.rewards[i] = t.reward;
        self.dones[i] = t.done;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    pub fn get(&self, i: usize) -> Transition {
        let d = self.dim;
        Transition {
            obs: self.obs[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_obs: self.next_obs[i * d..(i + 1) * d].to_vec(),
            done: self.dones[i],
        }
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl RngCore) -> Batch {
        let d = self.dim;
        let mut b = Batch {
            obs: Vec::with_capacity(n * d),
            next_obs: Vec::with_capacity(n * d),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let i = (rng.next_u64() % self.len as u64) as usize;
            b.obs.extend_from_slice(&self.obs[i * d..(i + 1) * d]);
            b.next_obs.extend_from_slice(&self.next_obs[i * d..(i + 1) * d]);
            b.actions.push(self.actions[i]);
            b.rewards.push(self.rewards[i]);
            b.dones.push(self.dones[i]);
        }
        b
    }
}
