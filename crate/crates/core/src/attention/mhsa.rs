use rand::Rng;

use super::{attend, AttentionConfig};
use crate::tensor::{shape_err, Element, Result, Tape, Tensor, TensorError, Var};

/// Projections of one MHSA layer, each `c×c`. Head `i` owns columns
/// `i·c/N .. (i+1)·c/N` of the query/key/value matrices and the matching
/// rows of `wp`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhsaWeights<T = f32> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wp: Tensor<T>,
}

impl<T: Element> MhsaWeights<T> {
    pub fn identity(c: usize) -> Self {
        Self {
            wq: Tensor::eye(c),
            wk: Tensor::eye(c),
            wv: Tensor::eye(c),
            wp: Tensor::eye(c),
        }
    }

    pub fn random<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        let std = 1.0 / (c as f64).sqrt();
        Self {
            wq: Tensor::randn(&[c, c], std, rng),
            wk: Tensor::randn(&[c, c], std, rng),
            wv: Tensor::randn(&[c, c], std, rng),
            wp: Tensor::randn(&[c, c], std, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> MhsaVars {
        MhsaVars {
            wq: tape.param(self.wq.clone()),
            wk: tape.param(self.wk.clone()),
            wv: tape.param(self.wv.clone()),
            wp: tape.param(self.wp.clone()),
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        for w in [&self.wq, &self.wk, &self.wv, &self.wp] {
            if w.shape() != [c, c] {
                return Err(TensorError::Dimension {
                    op: "mhsa weights",
                    lhs: vec![c, c],
                    rhs: w.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MhsaVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wp: Var,
}

/// MHSA over token batches `(batch, n, c)`: `A·Wᵖ (+ x)`.
/// Returns the output and the `(batch·heads, n, n)` attention probabilities.
pub fn mhsa_tokens<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    w: &MhsaVars,
    cfg: &AttentionConfig,
) -> Result<(Var, Var)> {
    let (a, probs) = attend(tape, x, w.wq, w.wk, w.wv, cfg)?;
    let mut out = tape.matmul(a, w.wp)?;
    if cfg.residual {
        out = tape.add(out, x)?;
    }
    Ok((out, probs))
}

#[derive(Debug, Clone)]
pub struct MhsaOutput<T = f32> {
    /// `c×h×w`
    pub output: Tensor<T>,
    /// `(heads, h·w, h·w)`, row-stochastic.
    pub attention: Tensor<T>,
}

/// MHSA on a channel-first feature map `c×h×w`.
pub fn mhsa_forward<T: Element>(
    x: &Tensor<T>,
    weights: &MhsaWeights<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    mhsa_forward_detailed(x, weights, cfg).map(|o| o.output)
}

pub fn mhsa_forward_detailed<T: Element>(
    x: &Tensor<T>,
    weights: &MhsaWeights<T>,
    cfg: &AttentionConfig,
) -> Result<MhsaOutput<T>> {
    cfg.validate()?;
    let &[c, h, w] = x.shape() else {
        return Err(shape_err(
            "mhsa",
            format!("expected c×h×w feature map, got {:?}", x.shape()),
        ));
    };
    cfg.head_width(c)?;
    weights.check(c)?;
    let mut tape = Tape::new();
    let vars = weights.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let tokens = tape.reshape(xv, &[c, h * w])?;
    let tokens = tape.permute(tokens, &[1, 0])?;
    let tokens = tape.reshape(tokens, &[1, h * w, c])?;
    let (out, probs) = mhsa_tokens(&mut tape, tokens, &vars, cfg)?;
    let out = tape.reshape(out, &[h * w, c])?;
    let out = tape.permute(out, &[1, 0])?;
    let out = tape.reshape(out, &[c, h, w])?;
    Ok(MhsaOutput {
        output: tape.value(out).clone().with_requires_grad(false),
        attention: tape.value(probs).clone().with_requires_grad(false),
    })
}
