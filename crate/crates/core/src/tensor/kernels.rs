//! Forward kernels. Pure functions of their inputs; the tape reuses them.

use super::{shape_err, Element, Result, Tensor, TensorError};

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

pub fn reshape<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let count: usize = shape.iter().product();
    if count != x.numel() || shape.contains(&0) {
        return Err(shape_err(
            "reshape",
            format!(
                "cannot view {:?} ({} values) as {shape:?} ({count} values)",
                x.shape(),
                x.numel()
            ),
        ));
    }
    Ok(Tensor::from_parts(shape.to_vec(), x.data().to_vec()))
}

pub(crate) fn validate_perm(rank: usize, perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(shape_err(
            "permute",
            format!("permutation {perm:?} has wrong length for rank {rank}"),
        ));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(shape_err(
                "permute",
                format!("{perm:?} is not a permutation of 0..{rank}"),
            ));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    validate_perm(x.rank(), perm)?;
    Ok(Tensor::from_parts(
        perm.iter().map(|&p| x.shape()[p]).collect(),
        permute_data(x.data(), x.shape(), perm),
    ))
}

pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    if rank == 0 || perm.iter().enumerate().all(|(i, &p)| i == p) {
        return data.to_vec();
    }
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    loop {
        let mut off = base;
        for _ in 0..inner {
            out.push(data[off]);
            off += inner_stride;
        }
        // odometer over the outer axes
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            base += src_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= src_strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
}

/// Batch geometry of a matmul: `(batch, m, p, n, rhs_shared, out_shape)`.
pub(crate) fn matmul_geometry(
    a: &[usize],
    b: &[usize],
) -> Result<(usize, usize, usize, usize, bool, Vec<usize>)> {
    let mismatch = || TensorError::Dimension {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (ra, rb) = (a.len(), b.len());
    let (m, p) = (a[ra - 2], a[ra - 1]);
    let (p2, n) = (b[rb - 2], b[rb - 1]);
    if p != p2 {
        return Err(mismatch());
    }
    let shared = rb == 2;
    if !shared && a[..ra - 2] != b[..rb - 2] {
        return Err(mismatch());
    }
    let batch = a[..ra - 2].iter().product();
    let mut out = a[..ra - 2].to_vec();
    out.extend([m, n]);
    Ok((batch, m, p, n, shared, out))
}

/// `[.., m, p] × [.., p, n]`; the right operand may also be a single
/// `[p, n]` matrix shared across the batch.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, p, n, shared, out_shape) = matmul_geometry(a.shape(), b.shape())?;
    let mut out = vec![T::ZERO; batch * m * n];
    if shared {
        T::gemm(
            batch * m,
            p,
            n,
            a.data(),
            false,
            b.data(),
            false,
            &mut out,
            false,
        );
    } else {
        for i in 0..batch {
            T::gemm(
                m,
                p,
                n,
                &a.data()[i * m * p..],
                false,
                &b.data()[i * p * n..],
                false,
                &mut out[i * m * n..],
                false,
            );
        }
    }
    Tensor::checked("matmul", out_shape, out)
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn zip_with<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::checked(op, a.shape().to_vec(), data)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data()
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect(),
    )
}

/// Adds `bias` (length = last extent) to every row.
pub fn add_bias<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let last = *x.shape().last().unwrap_or(&1);
    if bias.numel() != last || x.rank() == 0 {
        return Err(TensorError::Dimension {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(last) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::checked("add_bias", x.shape().to_vec(), data)
}

/// Softmax along the last axis, stabilised by subtracting the row maximum.
pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let last = *x.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(x.numel());
    let mut row_exp = vec![0.0f64; last];
    for row in x.data().chunks(last) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let mut sum = 0.0f64;
        for (e, v) in row_exp.iter_mut().zip(row) {
            *e = (v.to_f64() - max).exp();
            sum += *e;
        }
        out.extend(row_exp.iter().map(|e| T::from_f64(e / sum)));
    }
    Tensor::checked("softmax", x.shape().to_vec(), out)
}

pub struct LayerNormOut<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalises over the last axis, then applies `gamma · x̂ + beta`.
pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    layer_norm_full(x, gamma, beta, eps).map(|r| r.out)
}

pub(crate) fn layer_norm_full<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<LayerNormOut<T>> {
    if !(eps > 0.0) {
        return Err(TensorError::Config(format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    let last = *x.shape().last().unwrap_or(&1);
    if gamma.numel() != last || beta.numel() != last {
        return Err(TensorError::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let rows = x.numel() / last;
    let mut out = Vec::with_capacity(x.numel());
    let mut xhat = Vec::with_capacity(x.numel());
    let mut rstd = Vec::with_capacity(rows);
    for row in x.data().chunks(last) {
        let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / last as f64;
        let var = row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / last as f64;
        let r = 1.0 / (var + eps).sqrt();
        rstd.push(T::from_f64(r));
        for ((v, g), b) in row.iter().zip(gamma.data()).zip(beta.data()) {
            let h = (v.to_f64() - mean) * r;
            xhat.push(T::from_f64(h));
            out.push(T::from_f64(g.to_f64() * h + b.to_f64()));
        }
    }
    Ok(LayerNormOut {
        out: Tensor::checked("layer_norm", x.shape().to_vec(), out)?,
        xhat,
        rstd,
    })
}

/// Convolution hyper-parameters, shared by all spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    /// Number of spatial axes, 2 or 3.
    pub dims: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn same(dims: usize, kernel: usize) -> Self {
        Self {
            dims,
            stride: 1,
            padding: kernel / 2,
        }
    }
}

/// Conv geometry lifted to three spatial axes (a 2-D conv has depth 1).
#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out_shape: Vec<usize>,
}

impl ConvGeom {
    pub fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }
    pub fn ivol(&self) -> usize {
        self.input.iter().product()
    }
    pub fn ovol(&self) -> usize {
        self.output.iter().product()
    }
}

pub(crate) fn conv_geometry(x: &[usize], k: &[usize], spec: ConvSpec) -> Result<ConvGeom> {
    if spec.stride < 1 {
        return Err(TensorError::Config(format!(
            "conv stride must be at least 1, got {}",
            spec.stride
        )));
    }
    let d = spec.dims;
    if d != 2 && d != 3 {
        return Err(TensorError::Config(format!(
            "conv supports 2 or 3 spatial axes, got {d}"
        )));
    }
    if x.len() != d + 1 || k.len() != d + 2 || k[1] != x[0] {
        return Err(TensorError::Dimension {
            op: "conv",
            lhs: x.to_vec(),
            rhs: k.to_vec(),
        });
    }
    let lift = |s: &[usize], fill: usize| -> [usize; 3] {
        if d == 3 {
            [s[0], s[1], s[2]]
        } else {
            [fill, s[0], s[1]]
        }
    };
    let input = lift(&x[1..], 1);
    let kernel = lift(&k[2..], 1);
    let p = spec.padding;
    let s = spec.stride;
    let pad = if d == 3 { [p; 3] } else { [0, p, p] };
    let stride = if d == 3 { [s; 3] } else { [1, s, s] };
    let mut output = [0; 3];
    for a in 0..3 {
        let padded = input[a] + 2 * pad[a];
        if kernel[a] > padded || kernel[a] == 0 {
            return Err(shape_err(
                "conv",
                format!(
                    "kernel extent {} exceeds padded input extent {padded}",
                    kernel[a]
                ),
            ));
        }
        output[a] = (padded - kernel[a]) / stride[a] + 1;
    }
    let mut out_shape = vec![k[0]];
    out_shape.extend_from_slice(if d == 3 { &output[..] } else { &output[1..] });
    Ok(ConvGeom {
        cin: x[0],
        cout: k[0],
        input,
        kernel,
        output,
        stride,
        pad,
        out_shape,
    })
}

/// Visits every (column row, output position, input offset) triple of the
/// im2col matrix that lands inside the unpadded input.
fn for_each_tap(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let kvol = g.kvol();
    let ivol = g.ivol();
    for ci in 0..g.cin {
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let row = ci * kvol + (a * kh + b) * kw + c;
                    for z in 0..od {
                        let zi = (z * g.stride[0] + a) as isize - g.pad[0] as isize;
                        if zi < 0 || zi >= id as isize {
                            continue;
                        }
                        for y in 0..oh {
                            let yi = (y * g.stride[1] + b) as isize - g.pad[1] as isize;
                            if yi < 0 || yi >= ih as isize {
                                continue;
                            }
                            for x in 0..ow {
                                let xi = (x * g.stride[2] + c) as isize - g.pad[2] as isize;
                                if xi < 0 || xi >= iw as isize {
                                    continue;
                                }
                                let o = (z * oh + y) * ow + x;
                                let src =
                                    ci * ivol + (zi as usize * ih + yi as usize) * iw + xi as usize;
                                f(row, o, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let ovol = g.ovol();
    let mut cols = vec![T::ZERO; g.cin * g.kvol() * ovol];
    for_each_tap(g, |row, o, src| cols[row * ovol + o] = x[src]);
    cols
}

pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let ovol = g.ovol();
    let mut acc = vec![0.0f64; g.cin * g.ivol()];
    for_each_tap(g, |row, o, src| acc[src] += cols[row * ovol + o].to_f64());
    acc.into_iter().map(T::from_f64).collect()
}

/// Cross-correlation of a channel-first input `(cin, spatial..)` with a
/// kernel `(cout, cin, k..)`; returns `(cout, out..)`.
pub fn conv<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    conv_full(x, kernel, bias, spec).map(|(out, _, _)| out)
}

pub(crate) fn conv_full<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<(Tensor<T>, Vec<T>, ConvGeom)> {
    let g = conv_geometry(x.shape(), kernel.shape(), spec)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(TensorError::Dimension {
                op: "conv bias",
                lhs: kernel.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let cols = im2col(x.data(), &g);
    let ovol = g.ovol();
    let mut out = vec![T::ZERO; g.cout * ovol];
    T::gemm(
        g.cout,
        g.cin * g.kvol(),
        ovol,
        kernel.data(),
        false,
        &cols,
        false,
        &mut out,
        false,
    );
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(ovol).zip(b.data()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    let t = Tensor::checked("conv", g.out_shape.clone(), out)?;
    Ok((t, cols, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

pub(crate) fn pool_geometry(shape: &[usize], size: usize) -> Result<(usize, usize, usize)> {
    if size == 0 {
        return Err(TensorError::Config("pool size must be positive".into()));
    }
    if shape.len() < 2 {
        return Err(shape_err(
            "pool2d",
            format!("need rank >= 2, got {shape:?}"),
        ));
    }
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    if h % size != 0 {
        return Err(shape_err(
            "pool2d",
            format!("height {h} is not divisible by pool size {size}"),
        ));
    }
    if w % size != 0 {
        return Err(shape_err(
            "pool2d",
            format!("width {w} is not divisible by pool size {size}"),
        ));
    }
    Ok((shape[..r - 2].iter().product(), h, w))
}

/// Non-overlapping `size × size` pooling over the last two axes.
/// Also returns, per output cell, the flat input index of the window maximum
/// (first occurrence); empty for average pooling.
pub fn pool2d<T: Element>(
    x: &Tensor<T>,
    size: usize,
    mode: PoolMode,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (lead, h, w) = pool_geometry(x.shape(), size)?;
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(lead * oh * ow);
    let mut argmax = Vec::new();
    let inv_area = 1.0 / (size * size) as f64;
    for l in 0..lead {
        let plane = &x.data()[l * h * w..(l + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                match mode {
                    PoolMode::Max => {
                        let mut best = i * size * w + j * size;
                        for a in 0..size {
                            for b in 0..size {
                                let idx = (i * size + a) * w + j * size + b;
                                if plane[idx] > plane[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(plane[best]);
                        argmax.push(l * h * w + best);
                    }
                    PoolMode::Avg => {
                        let mut sum = 0.0f64;
                        for a in 0..size {
                            for b in 0..size {
                                sum += plane[(i * size + a) * w + j * size + b].to_f64();
                            }
                        }
                        out.push(T::from_f64(sum * inv_area));
                    }
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Ok((Tensor::from_parts(shape, out), argmax))
}

/// Nearest-neighbour upsampling of the last two axes by an integer factor.
pub fn upsample_nearest2d<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 || x.rank() < 2 {
        return Err(shape_err(
            "upsample",
            format!("factor {factor} on shape {:?}", x.shape()),
        ));
    }
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let lead = x.numel() / (h * w);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(lead * oh * ow);
    for l in 0..lead {
        let plane = &x.data()[l * h * w..];
        for i in 0..oh {
            for j in 0..ow {
                out.push(plane[(i / factor) * w + j / factor]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn concat_geometry(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = shapes
        .first()
        .ok_or_else(|| shape_err("concat", "no inputs"))?;
    if axis >= first.len() {
        return Err(shape_err(
            "concat",
            format!("axis {axis} out of range for {first:?}"),
        ));
    }
    let mut out = first.to_vec();
    out[axis] = 0;
    for s in shapes {
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(first.iter())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::Dimension {
                op: "concat",
                lhs: first.to_vec(),
                rhs: s.to_vec(),
            });
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

pub fn concat<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = parts.iter().map(|t| t.shape()).collect();
    let out_shape = concat_geometry(&shapes, axis)?;
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for t in parts {
            let chunk = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}
