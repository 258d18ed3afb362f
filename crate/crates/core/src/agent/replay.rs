use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

/// One stored experience `(s, a, r, s', done)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub done: bool,
}

/// Fixed-capacity FIFO store of experiences, usually [`Transition`]s.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
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

    /// Appends, evicting the oldest item when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Positions of a uniform sample with replacement, or `None` while the
    /// buffer holds fewer than `batch_size` transitions.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        Some((0..batch_size).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Option<Vec<&T>> {
        self.sample_indices(batch_size, rng)
            .map(|idx| idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition<usize> {
        Transition {
            state: i,
            action: 0,
            reward: i as f64,
            next_state: i + 1,
            done: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for i in 0..3 {
            b.push(t(i));
        }
        assert_eq!(b.iter().map(|x| x.state).collect::<Vec<_>>(), vec![1, 2]);
        for n in 3..10 {
            b.push(t(n));
            assert_eq!(b.len(), 2);
        }
    }

    #[test]
    fn not_ready_and_single() {
        let mut b = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(1, &mut rng).is_none());
        b.push(t(4));
        assert_eq!(b.sample(1, &mut rng).unwrap()[0].state, 4);
        assert!(b.sample(2, &mut rng).is_none());
    }

    #[test]
    fn seeded_samples_repeat() {
        let mut b = ReplayBuffer::new(10).unwrap();
        (0..10).for_each(|i| b.push(t(i)));
        let a = b.sample_indices(50, &mut ChaCha8Rng::seed_from_u64(3));
        let c = b.sample_indices(50, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, c);
    }
}
