//! Dense rank-4 `f32` tensors in `(n, c, h, w)` row-major order, the kernels
//! used by every block, and the `.tns` file format.

mod conv;
mod counter;
mod io;
mod ops;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conv::{conv2d, conv2d_naive, ConvSpec};
pub use counter::{Exec, Kernel, OpCounter};
pub use io::{read_tns, write_tns, TNS_MAGIC};
pub use ops::{
    add, affine_channels, concat_channels, linear, maxpool, mul, permute, relu, sigmoid, silu,
    upsample_nearest, Unary,
};

/// Tensor dimensions, batch first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn from_dims(dims: [usize; 4]) -> Self {
        Shape::new(dims[0], dims[1], dims[2], dims[3])
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    fn validate(&self) -> Result<()> {
        for (name, d) in ["n", "c", "h", "w"].iter().zip(self.dims()) {
            if d == 0 {
                return Err(Error::config(format!("tensor dimension {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::shape("tensor", "data length", shape.numel(), data.len()));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics on a zero dimension; use [`Tensor::from_vec`] for untrusted shapes.
    pub fn full(shape: Shape, value: f32) -> Self {
        shape.validate().expect("invalid tensor shape");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        shape.validate().expect("invalid tensor shape");
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// A `(len, 1, 1, 1)` tensor, the storage layout for bias and affine vectors.
    pub fn vector(values: Vec<f32>) -> Result<Self> {
        Tensor::from_vec(Shape::new(values.len(), 1, 1, 1), values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn index(&self, [n, c, h, w]: [usize; 4]) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn get(&self, idx: [usize; 4]) -> f32 {
        self.data[self.index(idx)]
    }

    /// Reinterpret the same data under a new shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        shape.validate()?;
        if shape.numel() != self.numel() {
            return Err(Error::shape("reshape", "element count", self.numel(), shape.numel()));
        }
        Ok(Tensor { shape, data: self.data })
    }

    /// Copy of channels `[start, end)`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let s = self.shape;
        if start >= end || end > s.c {
            return Err(Error::shape("slice_channels", "channel end", s.c, end));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * (end - start) * plane);
        for n in 0..s.n {
            let base = n * s.c * plane;
            data.extend_from_slice(&self.data[base + start * plane..base + end * plane]);
        }
        Tensor::from_vec(s.with_c(end - start), data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f32) -> Self {
        self.map(|v| v * k)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Largest `|a - b| / max(|a|, |b|)` over all elements (0 where both are 0).
    pub fn max_rel_diff(&self, reference: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| {
                let denom = a.abs().max(b.abs());
                if denom == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / denom
                }
            })
            .fold(0.0, f32::max)
    }
}
