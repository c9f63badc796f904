//! Dense tensors and a define-by-run reverse-mode differentiation engine.
//!
//! A [`Tensor`] is a plain value: a shape and a row-major buffer. Values
//! enter a [`Graph`] as leaves, every operation appends a node, and
//! [`Graph::backward`] sweeps the nodes in reverse insertion order. The graph
//! is rebuilt for every training step.

mod adam;
mod graph;
mod kernels;

pub use adam::{Adam, AdamConfig, AdamState, Parameter, ParamSet};
pub use graph::{Gradients, Graph, Var};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("conv2d: input has {input} channels but weight expects {weight}")]
    ChannelMismatch { input: usize, weight: usize },
    #[error("conv2d: invalid geometry ({0})")]
    ConvGeometry(String),
    #[error("maxpool2: spatial extent {h}x{w} is not even")]
    OddExtent { h: usize, w: usize },
    #[error("leaky_relu: slope {0} outside [0, 1)")]
    BadSlope(f64),
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable belongs to a different graph")]
    ForeignVar,
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("parameter `{name}`: {reason}")]
    ParamState { name: String, reason: String },
}

/// N-dimensional dense array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::BadBuffer {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self, TensorError> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Slice of the batch along the leading axis.
    pub fn batch_item(&self, index: usize) -> Result<Self, TensorError> {
        let (n, c, h, w) = self.dims4("batch_item")?;
        assert!(index < n, "batch index {index} out of range {n}");
        let len = c * h * w;
        Ok(Self {
            shape: vec![1, c, h, w],
            data: self.data[index * len..(index + 1) * len].to_vec(),
        })
    }

    /// Stacks `1 x C x H x W` tensors (or any equal rank-4 shapes) along N.
    pub fn stack(items: &[Self]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::BadBuffer {
            shape: vec![0],
            len: 0,
        })?;
        let (_, c, h, w) = first.dims4("stack")?;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.len() * first.numel());
        for t in items {
            let (tn, tc, th, tw) = t.dims4("stack")?;
            if (tc, th, tw) != (c, h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: vec![n, c, h, w],
            data,
        })
    }

    /// Largest absolute entry; zero for empty tensors.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }
}
