//! Fixed-capacity FIFO experience store.

use rand::seq::index;
use rand::Rng;

use super::MadqnError;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<F> {
    pub obs: Vec<F>,
    pub action: usize,
    pub reward: F,
    pub next_obs: Vec<F>,
}

/// A sampled minibatch laid out for batched network passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub obs: Vec<F>,
    pub actions: Vec<usize>,
    pub rewards: Vec<F>,
    pub next_obs: Vec<F>,
}

impl<F> Batch<F> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Ring buffer over flat observation storage; once full, each push
/// overwrites the oldest transition.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<F> {
    capacity: usize,
    obs_dim: usize,
    obs: Vec<F>,
    next_obs: Vec<F>,
    actions: Vec<usize>,
    rewards: Vec<F>,
    head: usize,
    len: usize,
}

impl<F: Real> ReplayBuffer<F> {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            obs: vec![F::zero(); capacity * obs_dim],
            next_obs: vec![F::zero(); capacity * obs_dim],
            actions: vec![0; capacity],
            rewards: vec![F::zero(); capacity],
            head: 0,
            len: 0,
        }
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

    pub fn push(&mut self, t: &Transition<F>) -> Result<(), MadqnError> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(MadqnError::ShapeMismatch {
                expected: self.obs_dim,
                found: t.obs.len().max(t.next_obs.len()),
            });
        }
        if !t.reward.is_finite() {
            return Err(MadqnError::NonFiniteReward(t.reward.as_f64()));
        }
        let d = self.obs_dim;
        let h = self.head;
        self.obs[h * d..(h + 1) * d].copy_from_slice(&t.obs);
        self.next_obs[h * d..(h + 1) * d].copy_from_slice(&t.next_obs);
        self.actions[h] = t.action;
        self.rewards[h] = t.reward;
        self.head = (h + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Transition at `age` positions back from the newest (0 = newest).
    pub fn get(&self, age: usize) -> Option<Transition<F>> {
        if age >= self.len {
            return None;
        }
        let slot = (self.head + self.capacity - 1 - age) % self.capacity;
        Some(self.slot(slot))
    }

    fn slot(&self, i: usize) -> Transition<F> {
        let d = self.obs_dim;
        Transition {
            obs: self.obs[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_obs: self.next_obs[i * d..(i + 1) * d].to_vec(),
        }
    }

    /// Uniform sample of `size` distinct stored transitions.
    pub fn sample<R: Rng>(&self, size: usize, rng: &mut R) -> Batch<F> {
        assert!(size <= self.len, "batch larger than buffer contents");
        let d = self.obs_dim;
        let mut batch = Batch {
            obs: Vec::with_capacity(size * d),
            actions: Vec::with_capacity(size),
            rewards: Vec::with_capacity(size),
            next_obs: Vec::with_capacity(size * d),
        };
        for i in index::sample(rng, self.len, size) {
            batch.obs.extend_from_slice(&self.obs[i * d..(i + 1) * d]);
            batch.next_obs.extend_from_slice(&self.next_obs[i * d..(i + 1) * d]);
            batch.actions.push(self.actions[i]);
            batch.rewards.push(self.rewards[i]);
        }
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn tr(k: usize) -> Transition<f32> {
        Transition {
            obs: vec![k as f32, 0.0],
            action: k % 20,
            reward: -(k as f32),
            next_obs: vec![k as f32 + 1.0, 1.0],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3, 2);
        for k in 0..5 {
            b.push(&tr(k)).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0), Some(tr(4)));
        assert_eq!(b.get(2), Some(tr(2)));
        assert_eq!(b.get(3), None);
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut b = ReplayBuffer::new(3, 2);
        let mut t = tr(1);
        t.reward = f32::NAN;
        assert!(matches!(b.push(&t), Err(MadqnError::NonFiniteReward(_))));
        let mut t = tr(1);
        t.obs.push(0.0);
        assert!(matches!(b.push(&t), Err(MadqnError::ShapeMismatch { .. })));
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity_and_samples_distinct(cap in 1usize..50, pushes in 0usize..200, seed_v in any::<u64>()) {
            let mut b = ReplayBuffer::new(cap, 2);
            for k in 0..pushes {
                b.push(&tr(k)).unwrap();
                prop_assert!(b.len() <= cap);
            }
            let size = b.len() / 2;
            let batch = b.sample(size, &mut seed::stream(seed_v, &[]));
            let mut keys: Vec<i64> = batch.obs.chunks(2).map(|o| o[0] as i64).collect();
            keys.sort_unstable();
            keys.dedup();
            prop_assert_eq!(keys.len(), size);
        }
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut b = ReplayBuffer::new(10, 2);
        for k in 0..10 {
            b.push(&tr(k)).unwrap();
        }
        let mut counts = [0usize; 10];
        let mut rng = seed::stream(4, &[]);
        for _ in 0..5000 {
            for o in b.sample(3, &mut rng).obs.chunks(2) {
                counts[o[0] as usize] += 1;
            }
        }
        for c in counts {
            assert!((1300..1700).contains(&c), "{counts:?}");
        }
    }
}
