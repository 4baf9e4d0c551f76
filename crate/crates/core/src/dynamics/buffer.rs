//! Replay storage and error-prioritised sampling.
//!
//! Records live once in a [`TransitionStore`]; each learner owns a
//! [`PrioritySampler`] over the store's slots, so ensemble members keep
//! independent priorities against shared data.

use crate::factored::TransitionRecord;
use rand::Rng;

/// Fixed-capacity ring buffer; the oldest record is evicted first.
#[derive(Clone, Debug)]
pub struct TransitionStore {
    records: Vec<TransitionRecord>,
    capacity: usize,
    next: usize,
}

impl TransitionStore {
    pub const DEFAULT_CAPACITY: usize = 200_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            records: Vec::new(),
            capacity,
            next: 0,
        }
    }

    /// Inserts a record and returns the slot it occupies.
    pub fn push(&mut self, record: TransitionRecord) -> usize {
        let slot = self.next;
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[slot] = record;
        }
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, slot: usize) -> &TransitionRecord {
        &self.records[slot]
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }
}

/// Binary tree over slot weights supporting proportional draws and a running max.
#[derive(Clone, Debug)]
struct SumMaxTree {
    leaves: usize,
    sum: Vec<f64>,
    max: Vec<f64>,
}

impl SumMaxTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            leaves,
            sum: vec![0.0; 2 * leaves],
            max: vec![0.0; 2 * leaves],
        }
    }

    /// Sets the sampling weight and the raw priority tracked by the max.
    fn set(&mut self, slot: usize, w: f64, raw: f64) {
        let mut i = slot + self.leaves;
        self.sum[i] = w;
        self.max[i] = raw;
        while i > 1 {
            i /= 2;
            self.sum[i] = self.sum[2 * i] + self.sum[2 * i + 1];
            self.max[i] = self.max[2 * i].max(self.max[2 * i + 1]);
        }
    }

    fn get(&self, slot: usize) -> f64 {
        self.sum[slot + self.leaves]
    }

    fn total(&self) -> f64 {
        self.sum[1]
    }

    fn max(&self) -> f64 {
        self.max[1]
    }

    /// Slot whose cumulative-weight interval contains `u ∈ [0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = 2 * i;
            if u < self.sum[left] || self.sum[left + 1] <= 0.0 {
                i = left;
            } else {
                u -= self.sum[left];
                i = left + 1;
            }
        }
        i - self.leaves
    }
}

/// Per-learner sampling distribution over store slots.
///
/// With prioritisation on, slot `k` is drawn with probability
/// `p_k^α / Σ p^α`, where `p_k` is the record's last prediction error.
/// New records enter at the current maximum priority. With it off,
/// draws are uniform over filled slots.
#[derive(Clone, Debug)]
pub struct PrioritySampler {
    exponent: Option<f64>,
    priorities: Vec<f64>,
    tree: SumMaxTree,
    filled: usize,
}

const PRIORITY_FLOOR: f64 = 1e-6;

impl PrioritySampler {
    pub fn prioritized(capacity: usize, exponent: f64) -> Self {
        assert!(exponent >= 0.0);
        Self::build(capacity, Some(exponent))
    }

    pub fn uniform(capacity: usize) -> Self {
        Self::build(capacity, None)
    }

    fn build(capacity: usize, exponent: Option<f64>) -> Self {
        Self {
            exponent,
            priorities: vec![0.0; capacity],
            tree: SumMaxTree::new(capacity),
            filled: 0,
        }
    }

    pub fn is_prioritized(&self) -> bool {
        self.exponent.is_some()
    }

    /// Registers a freshly written slot at the current maximum priority.
    pub fn on_insert(&mut self, slot: usize) {
        self.filled = self.filled.max(slot + 1);
        let p = self.max_priority();
        self.update(slot, p);
    }

    /// Largest priority currently held; 1 for an empty sampler.
    pub fn max_priority(&self) -> f64 {
        if self.tree.max() > 0.0 {
            self.tree.max()
        } else {
            1.0
        }
    }

    pub fn update(&mut self, slot: usize, priority: f64) {
        let p = if priority.is_finite() { priority.max(PRIORITY_FLOOR) } else { self.max_priority() };
        self.priorities[slot] = p;
        let w = self.exponent.map_or(1.0, |a| p.powf(a));
        self.tree.set(slot, w, p);
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.priorities[slot]
    }

    /// Sampling probability of `slot` under the current priorities.
    pub fn probability(&self, slot: usize) -> f64 {
        match self.exponent {
            Some(_) => self.tree.get(slot) / self.tree.total(),
            None => 1.0 / self.filled as f64,
        }
    }

    pub fn mean_priority(&self) -> f64 {
        if self.filled == 0 {
            return 0.0;
        }
        self.priorities[..self.filled].iter().sum::<f64>() / self.filled as f64
    }

    /// Draws `n` slots with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(self.filled > 0, "sampling from an empty buffer");
        match self.exponent {
            None => (0..n).map(|_| rng.random_range(0..self.filled)).collect(),
            Some(_) => {
                let total = self.tree.total();
                (0..n)
                    .map(|_| self.tree.find(rng.random::<f64>() * total).min(self.filled - 1))
                    .collect()
            }
        }
    }
}

/// A store paired with a single sampler.
#[derive(Clone, Debug)]
pub struct PrioritizedBuffer {
    pub store: TransitionStore,
    pub sampler: PrioritySampler,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, exponent: Option<f64>) -> Self {
        Self {
            store: TransitionStore::new(capacity),
            sampler: match exponent {
                Some(a) => PrioritySampler::prioritized(capacity, a),
                None => PrioritySampler::uniform(capacity),
            },
        }
    }

    pub fn push(&mut self, record: TransitionRecord) -> usize {
        let slot = self.store.push(record);
        self.sampler.on_insert(slot);
        slot
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::{EdgeMask, FactoredState};
    use rand::SeedableRng;

    fn rec(k: usize) -> TransitionRecord {
        TransitionRecord {
            state: FactoredState(vec![k as f64]),
            action: 0,
            next: FactoredState(vec![k as f64]),
            reward: 0.0,
            done: false,
            graph: EdgeMask::empty(1),
            stage: 0,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut s = TransitionStore::new(3);
        for k in 0..5 {
            s.push(rec(k));
        }
        assert_eq!(s.len(), 3);
        let kept: Vec<f64> = s.records().iter().map(|r| r.state.0[0]).collect();
        assert_eq!(kept, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn new_records_get_max_priority() {
        let mut b = PrioritizedBuffer::new(8, Some(0.5));
        b.push(rec(0));
        b.sampler.update(0, 4.0);
        b.push(rec(1));
        assert_eq!(b.sampler.priority(1), 4.0);
        b.sampler.update(0, 0.5);
        b.sampler.update(1, 0.25);
        b.push(rec(2));
        assert_eq!(b.sampler.priority(2), 0.5);
    }

    #[test]
    fn empirical_frequencies_follow_priority_power() {
        let mut b = PrioritizedBuffer::new(5, Some(0.5));
        let pri = [1.0, 4.0, 9.0, 0.25, 16.0];
        for (k, &p) in pri.iter().enumerate() {
            b.push(rec(k));
            b.sampler.update(k, p);
        }
        let weights: Vec<f64> = pri.iter().map(|p: &f64| p.sqrt()).collect();
        let total: f64 = weights.iter().sum();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for s in b.sampler.sample(draws, &mut rng) {
            counts[s] += 1;
        }
        for k in 0..5 {
            let p = weights[k] / total;
            assert!((b.sampler.probability(k) - p).abs() < 1e-12);
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            let dev = (counts[k] as f64 - draws as f64 * p).abs();
            assert!(dev <= 3.0 * sigma, "slot {k}: {} vs {}", counts[k], draws as f64 * p);
        }
    }

    #[test]
    fn uniform_sampler_stays_in_filled_range() {
        let mut b = PrioritizedBuffer::new(100, None);
        for k in 0..3 {
            b.push(rec(k));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(b.sampler.sample(1000, &mut rng).iter().all(|&s| s < 3));
        assert!((b.sampler.probability(2) - 1.0 / 3.0).abs() < 1e-15);
    }
}
