//! Full-image multi-head self-attention (MHSA) and the two-level
//! spatio-temporal attention (MSTA), plus their analytic FLOP counts.
//!
//! Tokens are spatial cells carrying `c` features. Tape-level functions take
//! channel-last maps `(h, w, c)` or token batches `(batch, n, c)`; the
//! `*_forward` wrappers accept channel-first `c×h×w` tensors.

mod complexity;
mod mhsa;
mod msta;

pub use complexity::{complexity_mhsa, complexity_msta, ComplexityError, ComplexityReport};
pub use mhsa::{
    mhsa_forward, mhsa_forward_detailed, mhsa_tokens, MhsaOutput, MhsaVars, MhsaWeights,
};
pub use msta::{
    msta_forward, msta_forward_detailed, msta_map, window_merge, window_partition, MstaOutput,
    MstaTrace, MstaVars, MstaWeights, QkvWeights,
};

use crate::tensor::{shape_err, Element, Result, Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub heads: usize,
    /// Level-1 window edge, in cells.
    pub g: usize,
    /// Level-2 pooling edge.
    pub g_prime: usize,
    /// Max-pool weight in the level-2 mix.
    pub alpha: f64,
    /// Average-pool weight in the level-2 mix.
    pub beta: f64,
    /// Overrides the feature width used in the `1/√d` score scale. `None`
    /// uses the per-head width.
    pub d_scale: Option<usize>,
    /// Add the block input to the projected output.
    pub residual: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            g: 8,
            g_prime: 2,
            alpha: 1.0,
            beta: 1.0,
            d_scale: None,
            residual: true,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.g == 0 || self.g_prime == 0 {
            return Err(TensorError::Config(
                "heads, g and g_prime must be positive".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(TensorError::Config(format!(
                "pooling coefficients must be non-negative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub(crate) fn head_width(&self, c: usize) -> Result<usize> {
        if self.heads == 0 || c % self.heads != 0 {
            return Err(TensorError::Config(format!(
                "{c} channels cannot be split across {} heads",
                self.heads
            )));
        }
        Ok(c / self.heads)
    }

    pub(crate) fn score_scale(&self, c: usize) -> Result<f64> {
        let d = match self.d_scale {
            Some(d) if d > 0 => d,
            Some(_) => return Err(TensorError::Config("d_scale must be positive".into())),
            None => self.head_width(c)?,
        };
        Ok(1.0 / (d as f64).sqrt())
    }

    /// Checks the divisibility both MSTA levels need on an `h × w` map.
    pub fn check_map(&self, h: usize, w: usize) -> Result<()> {
        for (name, extent) in [("height", h), ("width", w)] {
            if extent % self.g != 0 {
                return Err(shape_err(
                    "msta",
                    format!(
                        "{name} {extent} is not divisible by level-1 grid g={}",
                        self.g
                    ),
                ));
            }
            if extent % self.g_prime != 0 {
                return Err(shape_err(
                    "msta",
                    format!(
                        "{name} {extent} is not divisible by level-2 pool g'={}",
                        self.g_prime
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Scaled dot-product attention over token batches.
///
/// `x` is `(batch, n, c)`; the three projections are `c×c` and are split into
/// `heads` contiguous column blocks. Returns the head-concatenated
/// `(batch, n, c)` output and the attention probabilities
/// `(batch·heads, n, n)`.
pub fn attend<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    cfg: &AttentionConfig,
) -> Result<(Var, Var)> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(shape_err(
            "attention",
            format!("expected (batch, tokens, channels), got {shape:?}"),
        ));
    }
    let (b, n, c) = (shape[0], shape[1], shape[2]);
    let dh = cfg.head_width(c)?;
    let h = cfg.heads;
    let scale = cfg.score_scale(c)?;

    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let split = |tape: &mut Tape<T>, t: Var, perm: &[usize], out: &[usize]| -> Result<Var> {
        let t = tape.reshape(t, &[b, n, h, dh])?;
        let t = tape.permute(t, perm)?;
        tape.reshape(t, out)
    };
    let q = split(tape, q, &[0, 2, 1, 3], &[b * h, n, dh])?;
    let kt = split(tape, k, &[0, 2, 3, 1], &[b * h, dh, n])?;
    let v = split(tape, v, &[0, 2, 1, 3], &[b * h, n, dh])?;

    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, scale)?;
    let probs = tape.softmax(scores)?;
    let a = tape.matmul(probs, v)?;
    let a = tape.reshape(a, &[b, h, n, dh])?;
    let a = tape.permute(a, &[0, 2, 1, 3])?;
    let a = tape.reshape(a, &[b, n, c])?;
    Ok((a, probs))
}
