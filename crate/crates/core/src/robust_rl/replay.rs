use ndarray::{Array1, Array2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::environment::{ACT_DIM, OBS_DIM};
use crate::seeding::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACT_DIM],
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
}

/// Column-stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_experiences(items: &[&Experience]) -> Self {
        let n = items.len();
        Self {
            obs: Array2::from_shape_fn((n, OBS_DIM), |(i, j)| items[i].obs[j]),
            actions: Array2::from_shape_fn((n, ACT_DIM), |(i, j)| items[i].action[j]),
            rewards: Array1::from_shape_fn(n, |i| items[i].reward),
            next_obs: Array2::from_shape_fn((n, OBS_DIM), |(i, j)| items[i].next_obs[j]),
            done: Array1::from_shape_fn(n, |i| if items[i].done { 1.0 } else { 0.0 }),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// FIFO ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0 }
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

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `n` distinct entries drawn uniformly, or `None` while the buffer holds fewer.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Option<Batch> {
        if self.items.len() < n {
            return None;
        }
        let picks = index::sample(rng, self.items.len(), n);
        let refs: Vec<&Experience> = picks.iter().map(|i| &self.items[i]).collect();
        Some(Batch::from_experiences(&refs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{stream, Stream};

    fn exp(r: f64) -> Experience {
        Experience { obs: [r; OBS_DIM], action: [0.0; ACT_DIM], reward: r, next_obs: [r; OBS_DIM], done: false }
    }

    #[test]
    fn evicts_oldest_when_full() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(exp(i as f64));
        }
        assert_eq!(b.len(), 3);
        let kept: Vec<f64> = b.iter_oldest_first().map(|e| e.reward).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sample_has_no_repeats() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..50 {
            b.push(exp(i as f64));
        }
        let mut rng = stream(0, Stream::Replay);
        let batch = b.sample(50, &mut rng).unwrap();
        let mut r = batch.rewards.to_vec();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, (0..50).map(|i| i as f64).collect::<Vec<_>>());
        assert!(b.sample(51, &mut rng).is_none());
    }
}
