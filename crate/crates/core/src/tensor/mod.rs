//! Dense row-major tensors and a tape-based reverse-mode engine over the
//! small operator set the network needs.
//!
//! Forward kernels live in [`kernels`] as pure functions; [`Tape`] wraps them
//! and records what backward needs. [`grad_check`] compares tape gradients
//! against central differences.

mod element;
mod gradcheck;
pub mod kernels;
mod tape;

use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use element::Element;
pub use gradcheck::{grad_check, grad_check_at, GradCheckReport};
pub use kernels::{ConvSpec, PoolMode};
pub use tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Dense n-dimensional array with an optional gradient slot.
///
/// Extents are strictly positive; a rank-0 tensor is a scalar. Every stored
/// value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&e| e == 0) {
            return Err(shape_err(
                "from_vec",
                format!("extent of axis {axis} is zero in {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(
                "from_vec",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    /// Caller guarantees shape/length agreement and finiteness.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub(crate) fn checked(op: &'static str, shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
        }
        t
    }

    /// Normal samples with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(rng.random_range(lo..hi)))
            .collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the values. Callers must keep them finite.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<T>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut offset = 0;
        for (i, (&ix, &extent)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < extent, "index {ix} out of range on axis {i}");
            offset = offset * extent + ix;
        }
        self.data[offset]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        kernels::reshape(self, shape)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        )
    }

    /// Hash of the exact bit patterns of shape and data.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.shape.hash(&mut h);
        for v in &self.data {
            v.to_f64().to_bits().hash(&mut h);
        }
        h.finish()
    }
}
