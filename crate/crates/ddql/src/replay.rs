//! Experience storage and sampling: one ring buffer, the partitioned
//! double-buffer strategy, and the masked combined batch.
//!
//! Identity matters more than content here: every pushed transition gets a
//! monotone insertion id, which is what the double-buffer disjointness
//! guarantee and the tests are stated in terms of (identical contents may
//! legitimately recur). Minibatches are drawn uniformly without replacement
//! *within* a batch; in single-buffer mode the two batches of a pair are
//! independent draws and may overlap unless `disjoint_minibatches` is set.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("buffer capacity must be positive")]
    ZeroCapacity,
    #[error("double mode splits capacity in half; {0} is odd")]
    OddDoubleCapacity(usize),
    #[error("minibatch size must be positive")]
    ZeroBatch,
    #[error("need {need} stored transitions, have {have}")]
    NotEnoughTransitions { need: usize, have: usize },
    #[error("minibatch sizes differ: {0} vs {1}")]
    BatchSizeMismatch(usize, usize),
    #[error("{op} requires {want} buffer mode")]
    WrongMode { op: &'static str, want: &'static str },
}

/// One stored interaction. `reward` is post-clipping when clipping is
/// enabled. `terminal` and `truncated` are never both true; truncated
/// transitions still bootstrap during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

/// A transition plus the insertion id the strategy stamped on it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTransition {
    pub id: u64,
    pub transition: Transition,
}

/// Fixed-capacity ring with FIFO eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<StoredTransition>,
    /// Next overwrite slot once the buffer is full; while filling it equals
    /// `items.len() % capacity`.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(ReplayBuffer { capacity, items: Vec::new(), cursor: 0 })
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

    pub fn push(&mut self, item: StoredTransition) {
        debug_assert!(
            !(item.transition.terminal && item.transition.truncated),
            "terminal and truncated are mutually exclusive"
        );
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions oldest-first.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &StoredTransition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<StoredTransition>, ReplayError> {
        if n == 0 {
            return Err(ReplayError::ZeroBatch);
        }
        if n > self.items.len() {
            return Err(ReplayError::NotEnoughTransitions { need: n, have: self.items.len() });
        }
        let picks = rand::seq::index::sample(rng, self.items.len(), n);
        Ok(picks.iter().map(|i| self.items[i].clone()).collect())
    }

    /// One line per stored transition, oldest first, for eyeballing buffer
    /// contents.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        for st in self.iter_ordered() {
            let t = &st.transition;
            let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            out.push_str(&format!(
                "id={} action={} reward={} terminal={} truncated={} state={} next_state={}\n",
                st.id,
                t.action,
                t.reward,
                t.terminal,
                t.truncated,
                join(&t.state),
                join(&t.next_state)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferMode {
    Single,
    Double,
}

impl BufferMode {
    pub fn name(self) -> &'static str {
        match self {
            BufferMode::Single => "single",
            BufferMode::Double => "double",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ReplayError> {
        match s {
            "single" => Ok(BufferMode::Single),
            "double" => Ok(BufferMode::Double),
            _ => Err(ReplayError::WrongMode { op: "parse", want: "single or double" }),
        }
    }
}

/// Replay storage behind one push/sample interface. Double mode keeps two
/// half-capacity buffers and routes every push to one of them with a fair
/// coin, so the two sides partition the stored ids by construction.
#[derive(Debug, Clone)]
pub struct BufferStrategy {
    mode: BufferMode,
    /// Single mode: force the two minibatches of a pair to use disjoint
    /// indices (requires 2n stored transitions). Ignored in double mode,
    /// where disjointness already holds by routing.
    pub disjoint_minibatches: bool,
    buffers: Vec<ReplayBuffer>,
    next_id: u64,
}

impl BufferStrategy {
    /// `capacity` is the total across buffers; double mode halves it per
    /// side and therefore needs it even.
    pub fn new(mode: BufferMode, capacity: usize, disjoint_minibatches: bool) -> Result<Self, ReplayError> {
        let buffers = match mode {
            BufferMode::Single => vec![ReplayBuffer::new(capacity)?],
            BufferMode::Double => {
                if capacity % 2 != 0 {
                    return Err(ReplayError::OddDoubleCapacity(capacity));
                }
                vec![ReplayBuffer::new(capacity / 2)?, ReplayBuffer::new(capacity / 2)?]
            }
        };
        Ok(BufferStrategy { mode, disjoint_minibatches, buffers, next_id: 0 })
    }

    pub fn mode(&self) -> BufferMode {
        self.mode
    }

    pub fn total_len(&self) -> usize {
        self.buffers.iter().map(ReplayBuffer::len).sum()
    }

    /// Smallest per-source population: what a two-minibatch draw is limited
    /// by. Equals the single buffer's size in single mode.
    pub fn min_source_len(&self) -> usize {
        self.buffers.iter().map(ReplayBuffer::len).min().unwrap_or(0)
    }

    pub fn buffer(&self, i: usize) -> &ReplayBuffer {
        &self.buffers[i]
    }

    /// Stores the transition and returns its insertion id. The routing coin
    /// (double mode only) comes from `rng`.
    pub fn push<R: Rng + ?Sized>(&mut self, t: Transition, rng: &mut R) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let slot = match self.mode {
            BufferMode::Single => 0,
            BufferMode::Double => usize::from(rng.random::<f64>() < 0.5),
        };
        self.buffers[slot].push(StoredTransition { id, transition: t });
        id
    }

    /// One minibatch for the single-estimator agents. Single mode only;
    /// double mode has no principled single source.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<StoredTransition>, ReplayError> {
        match self.mode {
            BufferMode::Single => self.buffers[0].sample(n, rng),
            BufferMode::Double => Err(ReplayError::WrongMode { op: "sample_minibatch", want: "single" }),
        }
    }

    /// The minibatch pair (B1, B2). Double mode: B1 from buffer 1, B2 from
    /// buffer 2. Single mode: two independent draws from the one buffer
    /// (overlap permitted), or index-disjoint draws when
    /// `disjoint_minibatches` is set.
    pub fn sample_two_minibatches<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<(Vec<StoredTransition>, Vec<StoredTransition>), ReplayError> {
        if n == 0 {
            return Err(ReplayError::ZeroBatch);
        }
        match self.mode {
            BufferMode::Double => {
                let b1 = self.buffers[0].sample(n, rng)?;
                let b2 = self.buffers[1].sample(n, rng)?;
                Ok((b1, b2))
            }
            BufferMode::Single => {
                if self.disjoint_minibatches {
                    let buf = &self.buffers[0];
                    if 2 * n > buf.len() {
                        return Err(ReplayError::NotEnoughTransitions { need: 2 * n, have: buf.len() });
                    }
                    let both = buf.sample(2 * n, rng)?;
                    let b2 = both[n..].to_vec();
                    let mut b1 = both;
                    b1.truncate(n);
                    Ok((b1, b2))
                } else {
                    let b1 = self.buffers[0].sample(n, rng)?;
                    let b2 = self.buffers[0].sample(n, rng)?;
                    Ok((b1, b2))
                }
            }
        }
    }
}

/// B1 and B2 concatenated, with each row tagged by the head that owns it.
/// Predictions and targets for the other head are zeroed by construction in
/// the loss code, and `loss_scale` (always 2) restores `L1 + L2` from the
/// combined-batch MSE: `MSE over 2n rows = (L1 + L2) / 2`.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub rows: Vec<StoredTransition>,
    /// `head_of_row[i]` is 0 for the first n rows and 1 for the rest.
    pub head_of_row: Vec<usize>,
    pub loss_scale: f64,
}

pub fn build_masked_batch(
    b1: Vec<StoredTransition>,
    b2: Vec<StoredTransition>,
) -> Result<MaskedBatch, ReplayError> {
    if b1.is_empty() {
        return Err(ReplayError::ZeroBatch);
    }
    if b1.len() != b2.len() {
        return Err(ReplayError::BatchSizeMismatch(b1.len(), b2.len()));
    }
    let n = b1.len();
    let mut rows = b1;
    rows.extend(b2);
    let head_of_row = (0..2 * n).map(|i| usize::from(i >= n)).collect();
    Ok(MaskedBatch { rows, head_of_row, loss_scale: 2.0 })
}
