use super::kernels::{self, ConvGeom, ConvSpec, PoolMode};
use super::{Element, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Pool {
        x: Var,
        mode: PoolMode,
        size: usize,
        argmax: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Sum {
        x: Var,
    },
    Mse {
        x: Var,
        target: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Linear record of executed operations. Inputs always precede outputs, so
/// reverse index order is a valid topological order for backward.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Handles to every recorded node, in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        value.set_requires_grad(needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as an input; it is differentiated iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::zip_with("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::zip_with("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v * f).collect();
        let out = Tensor::checked("scale", src.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Scale { x, factor: f }, &[x]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = kernels::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_lastdim(self.value(x))?;
        Ok(self.push(out, Op::Softmax { x }, &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let r = kernels::layer_norm_full(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat: r.xhat,
            rstd: r.rstd,
        };
        Ok(self.push(r.out, op, &[x, gamma, beta]))
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (out, cols, geom) =
            kernels::conv_full(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            },
            &inputs,
        ))
    }

    pub fn pool2d(&mut self, x: Var, size: usize, mode: PoolMode) -> Result<Var> {
        let (out, argmax) = kernels::pool2d(self.value(x), size, mode)?;
        Ok(self.push(
            out,
            Op::Pool {
                x,
                mode,
                size,
                argmax,
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = kernels::reshape(self.value(x), shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = kernels::permute(self.value(x), perm)?;
        Ok(self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat(&tensors, axis)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn upsample_nearest2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = kernels::upsample_nearest2d(self.value(x), factor)?;
        Ok(self.push(out, Op::Upsample { x, factor }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(TensorError::Dimension {
                op: "mse",
                lhs: xv.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = xv.numel() as f64;
        let sse: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2))
            .sum();
        let out = Tensor::checked("mse", Vec::new(), vec![T::from_f64(sse / n)])?;
        Ok(self.push(
            out,
            Op::Mse {
                x,
                target: target.data().to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse-mode sweep from a scalar root. Forward values are untouched;
    /// gradients land in the grad slot of every node that needs one.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::ONE]);
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        if grads
            .iter()
            .flatten()
            .any(|g| g.iter().any(|v| !v.is_finite()))
        {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match g {
                Some(g) if node.needs_grad => node.value.set_grad(g),
                _ => node.value.clear_grad(),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].needs_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (batch, m, p, n, shared, _) =
                    kernels::matmul_geometry(val(*a).shape(), val(*b).shape())?;
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    let ga = slot(grads, *a, ad.len());
                    if shared {
                        T::gemm(batch * m, n, p, dy, false, bd, true, ga, true);
                    } else {
                        for s in 0..batch {
                            T::gemm(
                                m,
                                n,
                                p,
                                &dy[s * m * n..],
                                false,
                                &bd[s * p * n..],
                                true,
                                &mut ga[s * m * p..],
                                true,
                            );
                        }
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, bd.len());
                    if shared {
                        T::gemm(p, batch * m, n, ad, true, dy, false, gb, true);
                    } else {
                        for s in 0..batch {
                            T::gemm(
                                p,
                                m,
                                n,
                                &ad[s * m * p..],
                                true,
                                &dy[s * m * n..],
                                false,
                                &mut gb[s * p * n..],
                                true,
                            );
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(v) {
                        axpy(slot(grads, v, dy.len()), dy, T::ONE);
                    }
                }
            }
            Op::Sub { a, b } => {
                if wants(*a) {
                    axpy(slot(grads, *a, dy.len()), dy, T::ONE);
                }
                if wants(*b) {
                    axpy(slot(grads, *b, dy.len()), dy, -T::ONE);
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if wants(v) {
                        let o = val(other).data();
                        let g = slot(grads, v, dy.len());
                        for ((g, &d), &o) in g.iter_mut().zip(dy).zip(o) {
                            *g += d * o;
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                if wants(*x) {
                    axpy(slot(grads, *x, dy.len()), dy, *factor);
                }
            }
            Op::AddBias { x, bias } => {
                if wants(*x) {
                    axpy(slot(grads, *x, dy.len()), dy, T::ONE);
                }
                if wants(*bias) {
                    let n = val(*bias).numel();
                    let mut acc = vec![0.0f64; n];
                    for row in dy.chunks(n) {
                        for (a, &d) in acc.iter_mut().zip(row) {
                            *a += d.to_f64();
                        }
                    }
                    let g = slot(grads, *bias, n);
                    for (g, a) in g.iter_mut().zip(acc) {
                        *g += T::from_f64(a);
                    }
                }
            }
            Op::Relu { x } => {
                if wants(*x) {
                    let xd = val(*x).data();
                    let g = slot(grads, *x, dy.len());
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xd) {
                        if v > T::ZERO {
                            *g += d;
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if wants(*x) {
                    let y = nodes[i].value.data();
                    let last = *nodes[i].value.shape().last().unwrap_or(&1);
                    let g = slot(grads, *x, dy.len());
                    for ((grow, yrow), drow) in
                        g.chunks_mut(last).zip(y.chunks(last)).zip(dy.chunks(last))
                    {
                        let dot: f64 = yrow
                            .iter()
                            .zip(drow)
                            .map(|(a, b)| a.to_f64() * b.to_f64())
                            .sum();
                        for ((g, &yv), &d) in grow.iter_mut().zip(yrow).zip(drow) {
                            *g += T::from_f64(yv.to_f64() * (d.to_f64() - dot));
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = val(*gamma).numel();
                let gd = val(*gamma).data();
                if wants(*x) {
                    let g = slot(grads, *x, dy.len());
                    for (r, ((grow, hrow), drow)) in g
                        .chunks_mut(n)
                        .zip(xhat.chunks(n))
                        .zip(dy.chunks(n))
                        .enumerate()
                    {
                        let mut mean_d = 0.0f64;
                        let mut mean_dh = 0.0f64;
                        for ((&d, &h), &gm) in drow.iter().zip(hrow).zip(gd) {
                            let dh = d.to_f64() * gm.to_f64();
                            mean_d += dh;
                            mean_dh += dh * h.to_f64();
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        let rs = rstd[r].to_f64();
                        for (((g, &d), &h), &gm) in grow.iter_mut().zip(drow).zip(hrow).zip(gd) {
                            let dh = d.to_f64() * gm.to_f64();
                            *g += T::from_f64(rs * (dh - mean_d - h.to_f64() * mean_dh));
                        }
                    }
                }
                if wants(*gamma) || wants(*beta) {
                    let mut dg = vec![0.0f64; n];
                    let mut db = vec![0.0f64; n];
                    for (hrow, drow) in xhat.chunks(n).zip(dy.chunks(n)) {
                        for j in 0..n {
                            dg[j] += drow[j].to_f64() * hrow[j].to_f64();
                            db[j] += drow[j].to_f64();
                        }
                    }
                    if wants(*gamma) {
                        add_f64(slot(grads, *gamma, n), &dg);
                    }
                    if wants(*beta) {
                        add_f64(slot(grads, *beta, n), &db);
                    }
                }
            }
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let ovol = geom.ovol();
                let ck = geom.cin * geom.kvol();
                if wants(*w) {
                    let gw = slot(grads, *w, geom.cout * ck);
                    T::gemm(geom.cout, ovol, ck, dy, false, cols, true, gw, true);
                }
                if wants(*x) {
                    let mut dcols = vec![T::ZERO; ck * ovol];
                    T::gemm(
                        ck,
                        geom.cout,
                        ovol,
                        val(*w).data(),
                        true,
                        dy,
                        false,
                        &mut dcols,
                        false,
                    );
                    let dx = kernels::col2im(&dcols, geom);
                    axpy(slot(grads, *x, dx.len()), &dx, T::ONE);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let sums: Vec<f64> = dy
                            .chunks(ovol)
                            .map(|r| r.iter().map(|v| v.to_f64()).sum())
                            .collect();
                        add_f64(slot(grads, *b, geom.cout), &sums);
                    }
                }
            }
            Op::Pool {
                x,
                mode,
                size,
                argmax,
            } => {
                if wants(*x) {
                    let shape = val(*x).shape();
                    let r = shape.len();
                    let (h, w) = (shape[r - 2], shape[r - 1]);
                    let g = slot(grads, *x, val(*x).numel());
                    match mode {
                        PoolMode::Max => {
                            for (&src, &d) in argmax.iter().zip(dy) {
                                g[src] += d;
                            }
                        }
                        PoolMode::Avg => {
                            let (oh, ow) = (h / size, w / size);
                            let inv = T::from_f64(1.0 / (size * size) as f64);
                            for (o, &d) in dy.iter().enumerate() {
                                let l = o / (oh * ow);
                                let (oi, oj) = ((o / ow) % oh, o % ow);
                                for a in 0..*size {
                                    for bb in 0..*size {
                                        let idx = l * h * w + (oi * size + a) * w + oj * size + bb;
                                        g[idx] += d * inv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if wants(*x) {
                    axpy(slot(grads, *x, dy.len()), dy, T::ONE);
                }
            }
            Op::Permute { x, perm } => {
                if wants(*x) {
                    let out_shape = nodes[i].value.shape();
                    let back = kernels::permute_data(dy, out_shape, &kernels::inverse_perm(perm));
                    axpy(slot(grads, *x, back.len()), &back, T::ONE);
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = nodes[i].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = val(p).shape()[*axis] * inner;
                    if wants(p) {
                        let g = slot(grads, p, outer * chunk);
                        for o in 0..outer {
                            let src = &dy[o * total + offset..o * total + offset + chunk];
                            axpy(&mut g[o * chunk..(o + 1) * chunk], src, T::ONE);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Upsample { x, factor } => {
                if wants(*x) {
                    let shape = val(*x).shape();
                    let r = shape.len();
                    let (h, w) = (shape[r - 2], shape[r - 1]);
                    let (oh, ow) = (h * factor, w * factor);
                    let g = slot(grads, *x, val(*x).numel());
                    for (o, &d) in dy.iter().enumerate() {
                        let l = o / (oh * ow);
                        let (oi, oj) = ((o / ow) % oh, o % ow);
                        g[l * h * w + (oi / factor) * w + oj / factor] += d;
                    }
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    let g = slot(grads, *x, val(*x).numel());
                    g.iter_mut().for_each(|v| *v += dy[0]);
                }
            }
            Op::Mse { x, target } => {
                if wants(*x) {
                    let xd = val(*x).data();
                    let scale = T::from_f64(2.0 / xd.len() as f64) * dy[0];
                    let g = slot(grads, *x, xd.len());
                    for ((g, &a), &t) in g.iter_mut().zip(xd).zip(target) {
                        *g += (a - t) * scale;
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::ZERO; len])
}

fn axpy<T: Element>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn add_f64<T: Element>(dst: &mut [T], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += T::from_f64(s);
    }
}
