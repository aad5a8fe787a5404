//! Dense 4-D tensors and the reverse-mode autodiff tape built on them.
//!
//! Every tensor is laid out row-major as `(batch, channels, height, width)`.
//! The [`Graph`] records operations in the order they run and replays them
//! backwards in [`Graph::backward`].

pub mod kernels;
mod graph;
mod optim;
mod real;

use std::fmt;

use thiserror::Error;

pub use graph::{Graph, OpKind, Var};
pub use kernels::{effective_kernel_size, ConvGeometry};
pub use optim::{SgdMomentum, SgdParams};
pub use real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: {dim} mismatch ({left} vs {right})")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        left: usize,
        right: usize,
    },
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        len: usize,
        shape: Shape,
        expected: usize,
    },
    #[error("{op}: effective kernel {effective} exceeds padded input {padded} along {dim}")]
    KernelTooLarge {
        op: &'static str,
        dim: &'static str,
        effective: usize,
        padded: usize,
    },
    #[error("{op}: {dim} = {size} is not divisible by {window}")]
    NotDivisible {
        op: &'static str,
        dim: &'static str,
        size: usize,
        window: usize,
    },
    #[error("{op}: unsupported configuration: {reason}")]
    Unsupported { op: &'static str, reason: String },
    #[error("label {label} at index {index} is not a valid class")]
    InvalidLabel { index: usize, label: u8 },
    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
}

/// Tensor dimensions, always four-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

impl From<[usize; 4]> for Shape {
    fn from([b, c, h, w]: [usize; 4]) -> Self {
        Shape::new(b, c, h, w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
                expected: shape.numel(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        data.push(f([b, c, h, w]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.shape.channels + c) * self.shape.height + h) * self.shape.width + w
    }

    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(b, c, h, w)]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data viewed with a different batch/channel/spatial split.
    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Splits along the channel axis at the given channel counts.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor<T>>, TensorError> {
        let total: usize = sizes.iter().sum();
        if total != self.shape.channels {
            return Err(TensorError::ShapeMismatch {
                op: "split_channels",
                dim: "channels",
                left: total,
                right: self.shape.channels,
            });
        }
        let plane = self.shape.plane();
        let mut out: Vec<Tensor<T>> = sizes
            .iter()
            .map(|&c| Tensor::zeros([self.shape.batch, c, self.shape.height, self.shape.width]))
            .collect();
        for b in 0..self.shape.batch {
            let mut src = b * self.shape.item();
            for (part, &c) in out.iter_mut().zip(sizes) {
                let dst = b * c * plane;
                part.data[dst..dst + c * plane].copy_from_slice(&self.data[src..src + c * plane]);
                src += c * plane;
            }
        }
        Ok(out)
    }
}
