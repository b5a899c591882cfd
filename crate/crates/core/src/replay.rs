//! Experience replay: a uniform ring buffer and a rank-based prioritized
//! buffer with importance-sampling weights.

use std::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};

/// Priority floor added to every absolute TD error.
pub const PRIORITY_EPSILON: f64 = 1e-6;
/// Priority exponent used with rank-based replay.
pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_CAPACITY: usize = 10_000;
pub const BETA_START: f64 = 0.5;
pub const BETA_END: f64 = 1.0;

/// One experience tuple. `next` is `None` when the episode terminated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: Option<usize>,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.next.is_none()
    }
}

/// Fixed-capacity ring storage shared by both buffers.
#[derive(Debug, Clone)]
struct Ring<T> {
    slots: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> Ring<T> {
    fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(Ring {
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        })
    }

    /// Stores `item`, overwriting the oldest slot when full. Returns the slot.
    fn push(&mut self, item: T) -> usize {
        let slot = self.cursor;
        if self.slots.len() < self.capacity {
            self.slots.push(item);
        } else {
            self.slots[slot] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        slot
    }

    /// Slots from oldest to newest.
    fn order(&self) -> impl Iterator<Item = usize> + '_ {
        let len = self.slots.len();
        let start = if len < self.capacity { 0 } else { self.cursor };
        (0..len).map(move |k| (start + k) % len)
    }
}

#[derive(Debug, Clone)]
pub struct UniformBuffer {
    ring: Ring<Transition>,
}

impl UniformBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(UniformBuffer {
            ring: Ring::new(capacity)?,
        })
    }

    pub fn len(&self) -> usize {
        self.ring.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.ring.capacity
    }

    pub fn push(&mut self, t: Transition) {
        self.ring.push(t);
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.ring.slots.get(index)
    }

    /// Contents from oldest to newest.
    pub fn contents(&self) -> Vec<Transition> {
        self.ring.order().map(|i| self.ring.slots[i]).collect()
    }

    /// `batch` independent uniform draws with replacement.
    pub fn sample_uniform<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, Transition)>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch)
            .map(|_| {
                let i = rng.gen_range(0..self.len());
                (i, self.ring.slots[i])
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    transition: Transition,
    priority: f64,
    seq: u64,
}

/// A draw from a [`PrioritizedBuffer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrioritizedSample {
    pub index: usize,
    pub transition: Transition,
    pub weight: f64,
}

/// Rank-based prioritized replay: `P(i) = rank(i)^-alpha / sum_k k^-alpha`,
/// ranks by descending priority. Entries with equal priority share the mean
/// probability of the rank block they occupy.
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    ring: Ring<Entry>,
    alpha: f64,
    next_seq: u64,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("priority exponent {alpha}")));
        }
        Ok(PrioritizedBuffer {
            ring: Ring::new(capacity)?,
            alpha,
            next_seq: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.ring.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.slots.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.ring.slots.get(index).map(|e| &e.transition)
    }

    pub fn priority(&self, index: usize) -> Option<f64> {
        self.ring.slots.get(index).map(|e| e.priority)
    }

    pub fn max_priority(&self) -> Option<f64> {
        self.ring.slots.iter().map(|e| e.priority).reduce(f64::max)
    }

    /// Stores `t` with the current maximum priority (1.0 in an empty
    /// buffer). Returns the slot index.
    pub fn push(&mut self, t: Transition) -> usize {
        let priority = self.max_priority().unwrap_or(1.0);
        self.push_with_priority(t, priority)
    }

    fn push_with_priority(&mut self, t: Transition, priority: f64) -> usize {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.ring.push(Entry {
            transition: t,
            priority,
            seq,
        })
    }

    pub fn contents(&self) -> Vec<Transition> {
        self.ring.order().map(|i| self.ring.slots[i].transition).collect()
    }

    /// Probability of drawing each slot.
    pub fn sampling_distribution(&self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let entries = &self.ring.slots;
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_unstable_by(|&a, &b| {
            let (ea, eb) = (&entries[a], &entries[b]);
            eb.priority
                .partial_cmp(&ea.priority)
                .unwrap_or(Ordering::Equal)
                .then(ea.seq.cmp(&eb.seq))
        });

        let alpha = self.alpha;
        let mut probs = vec![0.0; entries.len()];
        let mut start = 0;
        while start < order.len() {
            let p = entries[order[start]].priority;
            let mut end = start + 1;
            while end < order.len() && entries[order[end]].priority == p {
                end += 1;
            }
            let block = if end - start == 1 {
                ((start + 1) as f64).powf(-alpha)
            } else {
                (start + 1..=end).map(|r| (r as f64).powf(-alpha)).sum::<f64>() / (end - start) as f64
            };
            for &slot in &order[start..end] {
                probs[slot] = block;
            }
            start = end;
        }
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(probs)
    }

    /// Draws `batch` entries from [`Self::sampling_distribution`] with
    /// importance weights `(N P(i))^-beta / max_j (N P(j))^-beta`.
    pub fn sample_prioritized<R: Rng + ?Sized>(
        &self,
        batch: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<Vec<PrioritizedSample>> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
        }
        let probs = self.sampling_distribution()?;
        let n = probs.len() as f64;
        let p_min = probs.iter().copied().fold(f64::INFINITY, f64::min);
        let w_max = (n * p_min).powf(-beta);
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::Domain(format!("sampling distribution: {e}")))?;
        Ok((0..batch)
            .map(|_| {
                let index = dist.sample(rng);
                PrioritizedSample {
                    index,
                    transition: self.ring.slots[index].transition,
                    weight: ((n * probs[index]).powf(-beta) / w_max).min(1.0),
                }
            })
            .collect())
    }

    /// Sets the priority of each slot in `indices` to `|delta| + PRIORITY_EPSILON`.
    pub fn update_priorities(&mut self, indices: &[usize], td_abs: &[f64]) -> Result<()> {
        if indices.len() != td_abs.len() {
            return Err(Error::Shape(format!(
                "{} indices but {} TD errors",
                indices.len(),
                td_abs.len()
            )));
        }
        let len = self.len();
        if let Some(&index) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::IndexOutOfRange { index, len });
        }
        if let Some(bad) = td_abs.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(format!("TD magnitude {bad}")));
        }
        for (&i, &d) in indices.iter().zip(td_abs) {
            self.ring.slots[i].priority = d + PRIORITY_EPSILON;
        }
        Ok(())
    }
}

/// Importance-sampling exponent, linear from 0.5 at step 0 to 1.0 at
/// `total_steps`.
pub fn anneal_beta(step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return BETA_END;
    }
    BETA_START + (BETA_END - BETA_START) * step as f64 / total_steps as f64
}
