use rand::Rng;

use crate::{Error, Result};

/// One stored step of the parameterized-action process.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Encoded state, `2L` entries.
    pub state: Vec<f32>,
    /// Material slot in task order, or `|N|` for terminate.
    pub action: usize,
    /// Layer thickness in nm; unused for terminate.
    pub thickness: f64,
    /// Backfilled discounted return of this step.
    pub reward: f64,
    pub next_state: Vec<f32>,
    /// Materials allowed after this step, in task order.
    pub next_allowed: Vec<bool>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO store with a per-entry loss used as sampling priority.
#[derive(Debug, Clone)]
pub struct ReplayMemory<X> {
    items: Vec<X>,
    losses: Vec<f64>,
    capacity: usize,
    min_fill: usize,
    cursor: usize,
}

/// `exp(l_i - max l) / sum_j exp(l_j - max l)`.
pub fn softmax_probabilities(losses: &[f64]) -> Vec<f64> {
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = losses.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

impl<X> ReplayMemory<X> {
    pub fn new(capacity: usize, min_fill: usize) -> Self {
        ReplayMemory {
            items: Vec::with_capacity(capacity),
            losses: Vec::with_capacity(capacity),
            capacity: capacity.max(1),
            min_fill,
            cursor: 0,
        }
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

    pub fn min_fill(&self) -> usize {
        self.min_fill
    }

    pub fn get(&self, i: usize) -> Option<&X> {
        self.items.get(i)
    }

    pub fn items(&self) -> &[X] {
        &self.items
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Inserts with the current maximum loss (1.0 when empty), evicting the oldest entry when full.
    pub fn push(&mut self, item: X) {
        let priority = if self.losses.is_empty() {
            1.0
        } else {
            self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        if self.items.len() < self.capacity {
            self.items.push(item);
            self.losses.push(priority);
        } else {
            self.items[self.cursor] = item;
            self.losses[self.cursor] = priority;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn set_loss(&mut self, i: usize, loss: f64) {
        self.losses[i] = loss;
    }

    fn ready(&self, batch: usize) -> Result<()> {
        let required = batch.max(self.min_fill);
        if self.items.len() < required || batch == 0 {
            return Err(Error::NotReady {
                size: self.items.len(),
                required,
            });
        }
        Ok(())
    }

    /// Draws `batch` indices with replacement, `P(i)` the softmax of the stored losses.
    pub fn sample_prioritized<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        self.ready(batch)?;
        let probs = softmax_probabilities(&self.losses);
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in probs {
            acc += p;
            cumulative.push(acc);
        }
        Ok((0..batch)
            .map(|_| {
                let u = rng.gen::<f64>() * acc;
                cumulative
                    .partition_point(|&c| c <= u)
                    .min(self.items.len() - 1)
            })
            .collect())
    }

    /// Draws `batch` indices uniformly with replacement.
    pub fn sample_uniform<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        self.ready(batch)?;
        Ok((0..batch)
            .map(|_| rng.gen_range(0..self.items.len()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        let p = softmax_probabilities(&[0.0, 2f64.ln()]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15 && (p[1] - 2.0 / 3.0).abs() < 1e-15);
        let p = softmax_probabilities(&[0.7; 5]);
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let p = softmax_probabilities(&[1000.0, 1000.0 + 2f64.ln()]);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fifo_eviction_and_capacity() {
        let mut m = ReplayMemory::new(3, 0);
        for i in 0..5 {
            m.push(i);
            assert!(m.len() <= 3);
        }
        let mut items = m.items().to_vec();
        items.sort();
        assert_eq!(items, vec![2, 3, 4]);
        m.push(5);
        let mut items = m.items().to_vec();
        items.sort();
        assert_eq!(items, vec![3, 4, 5]);
    }

    #[test]
    fn new_entries_take_maximal_priority() {
        let mut m = ReplayMemory::new(10, 0);
        m.push('a');
        assert_eq!(m.losses(), &[1.0]);
        m.set_loss(0, 3.5);
        m.push('b');
        assert_eq!(m.losses(), &[3.5, 3.5]);
    }

    #[test]
    fn not_ready_below_threshold() {
        let mut m = ReplayMemory::new(10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..3 {
            m.push(i);
        }
        assert!(matches!(
            m.sample_prioritized(2, &mut rng),
            Err(Error::NotReady { size: 3, required: 4 })
        ));
        m.push(3);
        assert_eq!(m.sample_prioritized(2, &mut rng).unwrap().len(), 2);
        assert!(m.sample_uniform(5, &mut rng).is_err());
    }

    #[test]
    fn empirical_frequencies_follow_priorities() {
        let mut m = ReplayMemory::new(2, 0);
        m.push(0);
        m.push(1);
        m.set_loss(0, 0.0);
        m.set_loss(1, 2f64.ln());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<usize> = (0..30_000)
            .flat_map(|_| m.sample_prioritized(2, &mut rng).unwrap())
            .collect();
        let ones = draws.iter().filter(|&&i| i == 1).count() as f64 / draws.len() as f64;
        assert!((ones - 2.0 / 3.0).abs() < 0.01, "{ones}");
    }
}
