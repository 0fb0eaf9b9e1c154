//! Reverse random sampling: during training some ground-truth future frames
//! are shown to the decoder as prompts, with a keep probability that decays
//! over epochs. The last future frame is always shown in training; at test
//! time nothing is.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EchoSequence, ValueSpace};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SamplingError {
    #[error("invalid sampling schedule: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
}

pub type Result<T, E = SamplingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct RssSchedule {
    pub p_start: f64,
    pub p_end: f64,
    pub decay_epochs: usize,
    pub seed: u64,
}

impl RssSchedule {
    pub fn new(p_start: f64, p_end: f64, decay_epochs: usize, seed: u64) -> Result<Self> {
        let s = Self {
            p_start,
            p_end,
            decay_epochs,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Full exposure at epoch 0, none after half of `max_epochs`.
    pub fn for_epochs(max_epochs: usize, seed: u64) -> Self {
        Self {
            p_start: 1.0,
            p_end: 0.0,
            decay_epochs: (max_epochs / 2).max(1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_end && self.p_end <= self.p_start && self.p_start <= 1.0) {
            return Err(SamplingError::Config(format!(
                "need 0 <= p_end <= p_start <= 1, got p_start={} p_end={}",
                self.p_start, self.p_end
            )));
        }
        if self.decay_epochs == 0 {
            return Err(SamplingError::Config(
                "decay_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Linear interpolation from `p_start` to `p_end` over `decay_epochs`,
    /// constant afterwards.
    pub fn keep_probability(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epochs {
            return self.p_end;
        }
        let frac = epoch as f64 / self.decay_epochs as f64;
        (self.p_start + (self.p_end - self.p_start) * frac).clamp(self.p_end, self.p_start)
    }

    fn rng(&self, epoch: usize, sequence_id: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
        key[16..24].copy_from_slice(&sequence_id.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Test,
}

/// Which future frames are shown to the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMask {
    keep: Vec<bool>,
}

impl PromptMask {
    pub fn from_keep(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn all_hidden(k: usize) -> Self {
        Self {
            keep: vec![false; k],
        }
    }

    pub fn all_kept(k: usize) -> Self {
        Self {
            keep: vec![true; k],
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Draws the prompt mask for one sequence. Deterministic in
/// `(schedule seed, epoch, sequence_id)`.
pub fn sample_mask(
    sched: &RssSchedule,
    epoch: usize,
    k: usize,
    mode: SampleMode,
    sequence_id: u64,
) -> Result<PromptMask> {
    if k == 0 {
        return Err(SamplingError::Contract("prompt mask needs k >= 1".into()));
    }
    if mode == SampleMode::Test {
        return Ok(PromptMask::all_hidden(k));
    }
    sched.validate()?;
    let p = sched.keep_probability(epoch);
    let mut rng = sched.rng(epoch, sequence_id);
    let mut keep: Vec<bool> = (0..k - 1).map(|_| rng.random_bool(p)).collect();
    keep.push(true);
    Ok(PromptMask { keep })
}

/// Read access to a stack of frames. Prompt construction goes through this
/// so that content reads can be counted.
pub trait FrameSource {
    /// `(frames, height, width)`
    fn dims(&self) -> (usize, usize, usize);
    fn value_space(&self) -> ValueSpace;
    fn frame(&self, i: usize) -> &[f32];
}

impl FrameSource for EchoSequence {
    fn dims(&self) -> (usize, usize, usize) {
        (self.len(), self.height(), self.width())
    }

    fn value_space(&self) -> ValueSpace {
        self.value_space
    }

    fn frame(&self, i: usize) -> &[f32] {
        EchoSequence::frame(self, i)
    }
}

/// Wraps a source and counts frame-content reads.
pub struct CountingSource<'a, S: FrameSource + ?Sized> {
    inner: &'a S,
    reads: Cell<usize>,
}

impl<'a, S: FrameSource + ?Sized> CountingSource<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            reads: Cell::new(0),
        }
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }
}

impl<S: FrameSource + ?Sized> FrameSource for CountingSource<'_, S> {
    fn dims(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn value_space(&self) -> ValueSpace {
        self.inner.value_space()
    }

    fn frame(&self, i: usize) -> &[f32] {
        self.reads.set(self.reads.get() + 1);
        self.inner.frame(i)
    }
}

/// Kept frames are copied from `targets`; hidden ones become zeros. Hidden
/// frames are never read.
pub fn apply_prompts<S: FrameSource + ?Sized>(
    targets: &S,
    mask: &PromptMask,
) -> Result<EchoSequence> {
    let (k, h, w) = targets.dims();
    if mask.len() != k {
        return Err(SamplingError::Contract(format!(
            "mask has {} entries for {k} target frames",
            mask.len()
        )));
    }
    let mut values = vec![0f32; k * h * w];
    for (i, out) in values.chunks_mut(h * w).enumerate() {
        if mask.keep[i] {
            out.copy_from_slice(targets.frame(i));
        }
    }
    EchoSequence::new(values, k, h, w, targets.value_space())
        .map_err(|e| SamplingError::Contract(e.to_string()))
}
