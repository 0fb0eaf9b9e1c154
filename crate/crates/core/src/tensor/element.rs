use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar type stored in a [`Tensor`](super::Tensor).
///
/// Training runs in `f32`; `f64` exists so finite-difference checks are not
/// swamped by storage rounding. Reductions always accumulate in `f64`.
pub trait Element:
    Copy
    + Default
    + Debug
    + Display
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;

    /// `c (m×n) [+]= op(a) (m×k) · op(b) (k×n)`, all row-major.
    ///
    /// `a_t` means `a` is stored as `k×m` and used transposed; likewise `b_t`
    /// for a `n×k` buffer. Products accumulate in `f64`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // logical (rows × cols); storage is (cols × rows) when transposed
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

#[allow(clippy::too_many_arguments)]
fn dgemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = strides(m, k, a_t);
    let (rsb, csb) = strides(k, n, b_t);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    ) {
        dgemm_raw(m, k, n, a, a_t, b, b_t, c, accumulate);
    }
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    ) {
        let a64: Vec<f64> = a[..m * k].iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = b[..k * n].iter().map(|&v| v as f64).collect();
        let mut c64: Vec<f64> = if accumulate {
            c[..m * n].iter().map(|&v| v as f64).collect()
        } else {
            vec![0.0; m * n]
        };
        dgemm_raw(m, k, n, &a64, a_t, &b64, b_t, &mut c64, accumulate);
        for (dst, src) in c[..m * n].iter_mut().zip(&c64) {
            *dst = *src as f32;
        }
    }
}
