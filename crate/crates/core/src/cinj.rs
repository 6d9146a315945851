//! Cross-iteration noise judgment.
//!
//! A FIFO window of the last `N` classification losses defines an adaptive
//! threshold: the `⌊r·N⌋`-th smallest loss (1-indexed) for acceptance rate
//! `r`. A label whose current loss is strictly greater than the threshold is
//! judged noisy. Until the window is full, verdicts are deferred.
//!
//! Callers judge first and push afterwards, so an object's own loss never
//! contributes to the threshold it is judged against.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_QUEUE_LENGTH: usize = 128;

/// Acceptance rate suggested for a given label-noise rate: `1 - R`, but never
/// below one half.
pub fn default_acceptance_rate(label_noise_rate: f64) -> f64 {
    (1.0 - label_noise_rate).clamp(0.5, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub object_id: u64,
    pub loss: f64,
    /// Insertion counter, used for stable tie-breaking.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QueueState", into = "QueueState")]
pub struct LossQueue {
    capacity: usize,
    acceptance_rate: f64,
    rank: usize,
    entries: VecDeque<QueueEntry>,
    next_seq: u64,
}

/// Checkpoint form of a [`LossQueue`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct QueueState {
    capacity: usize,
    acceptance_rate: f64,
    next_seq: u64,
    entries: Vec<QueueEntry>,
}

impl TryFrom<QueueState> for LossQueue {
    type Error = Error;

    fn try_from(s: QueueState) -> Result<Self> {
        let mut q = LossQueue::new(s.capacity, s.acceptance_rate)?;
        if s.entries.len() > s.capacity {
            return Err(Error::Config(format!(
                "checkpoint holds {} entries for capacity {}",
                s.entries.len(),
                s.capacity
            )));
        }
        if s.entries
            .iter()
            .any(|e| !e.loss.is_finite() || e.seq >= s.next_seq)
        {
            return Err(Error::Config("corrupt queue checkpoint entry".into()));
        }
        q.entries = s.entries.into();
        q.next_seq = s.next_seq;
        Ok(q)
    }
}

impl From<LossQueue> for QueueState {
    fn from(q: LossQueue) -> Self {
        Self {
            capacity: q.capacity,
            acceptance_rate: q.acceptance_rate,
            next_seq: q.next_seq,
            entries: q.entries.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clean,
    Noisy,
    Deferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub object_id: u64,
    pub loss: f64,
    /// `None` while deferred.
    pub threshold: Option<f64>,
    pub verdict: Verdict,
}

/// 1-indexed rank `⌊r·N⌋`. The small slack absorbs products such as
/// `0.29 * 100 = 28.999999999999996`.
pub fn threshold_rank(acceptance_rate: f64, capacity: usize) -> usize {
    (acceptance_rate * capacity as f64 + 1e-9).floor() as usize
}

impl LossQueue {
    pub fn new(capacity: usize, acceptance_rate: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("queue length must be positive".into()));
        }
        if !(acceptance_rate > 0.0 && acceptance_rate <= 1.0) {
            return Err(Error::Config(format!(
                "acceptance rate must be in (0, 1], got {acceptance_rate}"
            )));
        }
        let rank = threshold_rank(acceptance_rate, capacity);
        if rank == 0 {
            return Err(Error::Config(format!(
                "acceptance rate {acceptance_rate} selects no entry of a length-{capacity} queue"
            )));
        }
        Ok(Self {
            capacity,
            acceptance_rate,
            rank,
            entries: VecDeque::with_capacity(capacity),
            next_seq: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.acceptance_rate
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// The `⌊r·N⌋`-th smallest loss, 1-indexed.
    pub fn threshold(&self) -> Result<f64> {
        if !self.is_full() {
            return Err(Error::QueueNotFull {
                len: self.entries.len(),
                capacity: self.capacity,
            });
        }
        let mut losses: Vec<f64> = self.entries.iter().map(|e| e.loss).collect();
        let (_, kth, _) = losses.select_nth_unstable_by(self.rank - 1, f64::total_cmp);
        Ok(*kth)
    }

    pub fn judge(&self, object_id: u64, loss: f64) -> Judgment {
        match self.threshold() {
            Ok(t) => Judgment {
                object_id,
                loss,
                threshold: Some(t),
                verdict: if loss > t {
                    Verdict::Noisy
                } else {
                    Verdict::Clean
                },
            },
            Err(_) => Judgment {
                object_id,
                loss,
                threshold: None,
                verdict: Verdict::Deferred,
            },
        }
    }

    pub fn push(&mut self, object_id: u64, loss: f64) {
        debug_assert!(loss.is_finite());
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(QueueEntry {
            object_id,
            loss,
            seq: self.next_seq,
        });
        self.next_seq += 1;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
