use rand::Rng;

use super::{attend, AttentionConfig};
use crate::tensor::{shape_err, Element, PoolMode, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct QkvWeights<T = f32> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
}

impl<T: Element> QkvWeights<T> {
    pub fn random<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        let std = 1.0 / (c as f64).sqrt();
        Self {
            wq: Tensor::randn(&[c, c], std, rng),
            wk: Tensor::randn(&[c, c], std, rng),
            wv: Tensor::randn(&[c, c], std, rng),
        }
    }

    pub fn identity(c: usize) -> Self {
        Self {
            wq: Tensor::eye(c),
            wk: Tensor::eye(c),
            wv: Tensor::eye(c),
        }
    }
}

/// Level-1 (windowed) and level-2 (pooled) projections plus the fusion
/// pair `Wᵐ·Wⁿ`. All matrices are `c×c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MstaWeights<T = f32> {
    pub level1: QkvWeights<T>,
    pub level2: QkvWeights<T>,
    pub wm: Tensor<T>,
    pub wn: Tensor<T>,
}

impl<T: Element> MstaWeights<T> {
    pub fn random<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        let std = 1.0 / (c as f64).sqrt();
        Self {
            level1: QkvWeights::random(c, rng),
            level2: QkvWeights::random(c, rng),
            wm: Tensor::randn(&[c, c], std, rng),
            wn: Tensor::randn(&[c, c], std, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> MstaVars {
        MstaVars {
            q1: tape.param(self.level1.wq.clone()),
            k1: tape.param(self.level1.wk.clone()),
            v1: tape.param(self.level1.wv.clone()),
            q2: tape.param(self.level2.wq.clone()),
            k2: tape.param(self.level2.wk.clone()),
            v2: tape.param(self.level2.wv.clone()),
            wm: tape.param(self.wm.clone()),
            wn: tape.param(self.wn.clone()),
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        let all = [
            &self.level1.wq,
            &self.level1.wk,
            &self.level1.wv,
            &self.level2.wq,
            &self.level2.wk,
            &self.level2.wv,
            &self.wm,
            &self.wn,
        ];
        for w in all {
            if w.shape() != [c, c] {
                return Err(TensorError::Dimension {
                    op: "msta weights",
                    lhs: vec![c, c],
                    rhs: w.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MstaVars {
    pub q1: Var,
    pub k1: Var,
    pub v1: Var,
    pub q2: Var,
    pub k2: Var,
    pub v2: Var,
    pub wm: Var,
    pub wn: Var,
}

/// `(h, w, c)` → `(h/g · w/g, g², c)`: window `(i, j)` holds cells
/// `(i·g + a, j·g + b)` in row-major `(a, b)` order.
pub fn window_partition<T: Element>(tape: &mut Tape<T>, x: Var, g: usize) -> Result<Var> {
    let &[h, w, c] = tape.shape(x) else {
        return Err(shape_err("window_partition", "expected (h, w, c)"));
    };
    if g == 0 || h % g != 0 || w % g != 0 {
        return Err(shape_err(
            "window_partition",
            format!("{h}×{w} map cannot be tiled by {g}×{g} windows"),
        ));
    }
    let t = tape.reshape(x, &[h / g, g, w / g, g, c])?;
    let t = tape.permute(t, &[0, 2, 1, 3, 4])?;
    tape.reshape(t, &[(h / g) * (w / g), g * g, c])
}

/// Inverse of [`window_partition`].
pub fn window_merge<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    h: usize,
    w: usize,
    g: usize,
) -> Result<Var> {
    let c = *tape.shape(x).last().unwrap_or(&0);
    let t = tape.reshape(x, &[h / g, w / g, g, g, c])?;
    let t = tape.permute(t, &[0, 2, 1, 3, 4])?;
    tape.reshape(t, &[h, w, c])
}

/// Intermediate values of one MSTA evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MstaTrace {
    /// `(h, w, c)`
    pub out: Var,
    /// Level-1 attention plus its input residual, `(h, w, c)`.
    pub att1: Var,
    /// `½(α·max + β·avg)` pooled map, `(c, h/g′, w/g′)`.
    pub pooled: Var,
    /// Level-2 attention replicated back to full resolution, `(h, w, c)`.
    pub att2: Var,
    /// `(windows·heads, g², g²)`
    pub probs1: Var,
    /// `(heads, n2, n2)` with `n2 = h·w/g′²`
    pub probs2: Var,
}

/// MSTA on a channel-last map `(h, w, c)`.
pub fn msta_map<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    v: &MstaVars,
    cfg: &AttentionConfig,
) -> Result<MstaTrace> {
    cfg.validate()?;
    let &[h, w, c] = tape.shape(x) else {
        return Err(shape_err(
            "msta",
            format!("expected (h, w, c), got {:?}", tape.shape(x)),
        ));
    };
    cfg.check_map(h, w)?;
    let (g, gp) = (cfg.g, cfg.g_prime);

    // level 1: attention inside g×g windows
    let windows = window_partition(tape, x, g)?;
    let (local, probs1) = attend(tape, windows, v.q1, v.k1, v.v1, cfg)?;
    let local = window_merge(tape, local, h, w, g)?;
    let att1 = tape.add(local, x)?;

    // level 2: pooled cells as tokens
    let chw = tape.permute(att1, &[2, 0, 1])?;
    let maxp = tape.pool2d(chw, gp, PoolMode::Max)?;
    let avgp = tape.pool2d(chw, gp, PoolMode::Avg)?;
    let maxp = tape.scale(maxp, 0.5 * cfg.alpha)?;
    let avgp = tape.scale(avgp, 0.5 * cfg.beta)?;
    let pooled = tape.add(maxp, avgp)?;
    let (hp, wp) = (h / gp, w / gp);
    let coarse = tape.permute(pooled, &[1, 2, 0])?;
    let coarse = tape.reshape(coarse, &[1, hp * wp, c])?;
    let (global, probs2) = attend(tape, coarse, v.q2, v.k2, v.v2, cfg)?;
    let global = tape.reshape(global, &[hp, wp, c])?;
    let global = tape.permute(global, &[2, 0, 1])?;
    let global = tape.upsample_nearest2d(global, gp)?;
    let att2 = tape.permute(global, &[1, 2, 0])?;

    // fusion
    let fused = tape.add(att1, att2)?;
    let fused = tape.matmul(fused, v.wm)?;
    let mut out = tape.matmul(fused, v.wn)?;
    if cfg.residual {
        out = tape.add(out, x)?;
    }
    Ok(MstaTrace {
        out,
        att1,
        pooled,
        att2,
        probs1,
        probs2,
    })
}

#[derive(Debug, Clone)]
pub struct MstaOutput<T = f32> {
    /// `c×h×w`
    pub output: Tensor<T>,
    /// `(windows·heads, g², g²)`
    pub attention1: Tensor<T>,
    /// `(heads, n2, n2)`
    pub attention2: Tensor<T>,
}

/// MSTA on a channel-first feature map `c×h×w`.
pub fn msta_forward<T: Element>(
    x: &Tensor<T>,
    weights: &MstaWeights<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    msta_forward_detailed(x, weights, cfg).map(|o| o.output)
}

pub fn msta_forward_detailed<T: Element>(
    x: &Tensor<T>,
    weights: &MstaWeights<T>,
    cfg: &AttentionConfig,
) -> Result<MstaOutput<T>> {
    let &[c, _, _] = x.shape() else {
        return Err(shape_err(
            "msta",
            format!("expected c×h×w feature map, got {:?}", x.shape()),
        ));
    };
    weights.check(c)?;
    let mut tape = Tape::new();
    let vars = weights.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let hwc = tape.permute(xv, &[1, 2, 0])?;
    let trace = msta_map(&mut tape, hwc, &vars, cfg)?;
    let out = tape.permute(trace.out, &[2, 0, 1])?;
    Ok(MstaOutput {
        output: tape.value(out).clone().with_requires_grad(false),
        attention1: tape.value(trace.probs1).clone().with_requires_grad(false),
        attention2: tape.value(trace.probs2).clone().with_requires_grad(false),
    })
}
