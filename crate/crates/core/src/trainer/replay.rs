use alloc::vec::Vec;

use rand::Rng;

use super::TrainError;
use crate::domain::FeatureVector;
use crate::graph::AdjacencyGraph;

/// One joint step of every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<FeatureVector>,
    pub graph: AdjacencyGraph,
    /// Action indices.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_features: Vec<FeatureVector>,
    pub next_graph: AdjacencyGraph,
    pub done: bool,
}

/// FIFO ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    /// Slot the next insertion overwrites once full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::with_capacity(capacity.min(4096)), capacity, cursor: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
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

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> + '_ {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>, TrainError> {
        if self.items.len() < batch || batch == 0 {
            return Err(TrainError::BufferTooSmall { have: self.items.len(), need: batch.max(1) });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_full;
    use proptest::prelude::*;

    fn tr(tag: f64) -> Transition {
        Transition {
            features: vec![[tag; 6]],
            graph: build_full(1),
            actions: vec![0],
            rewards: vec![tag],
            next_features: vec![[tag; 6]],
            next_graph: build_full(1),
            done: false,
        }
    }

    #[test]
    fn sampling_requires_a_full_batch() {
        let mut b = ReplayBuffer::new(4);
        b.push(tr(0.0));
        let mut rng = crate::rng::stream(0, 0);
        assert_eq!(b.sample_indices(2, &mut rng), Err(TrainError::BufferTooSmall { have: 1, need: 2 }));
        b.push(tr(1.0));
        assert_eq!(b.sample_indices(2, &mut rng).unwrap().len(), 2);
    }

    proptest! {
        #[test]
        fn fifo_and_bounded(capacity in 1usize..16, inserts in 0usize..64) {
            let mut b = ReplayBuffer::new(capacity);
            for k in 0..inserts {
                b.push(tr(k as f64));
                prop_assert!(b.len() <= capacity);
            }
            let kept: Vec<f64> = b.iter_oldest_first().map(|t| t.rewards[0]).collect();
            let first = inserts.saturating_sub(capacity);
            let expected: Vec<f64> = (first..inserts).map(|k| k as f64).collect();
            prop_assert_eq!(kept, expected);
        }
    }
}
