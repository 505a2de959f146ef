use std::cell::Cell;

use super::conv::{conv2d, conv2d_naive, conv2d_naive_counted, ConvSpec};
use super::ops::{self, Unary};
use super::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Fast,
    Naive,
}

/// Tallies work done by an instrumented forward pass.
#[derive(Debug, Default)]
pub struct OpCounter {
    macs: Cell<u64>,
    elementwise: Cell<u64>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub fn elementwise(&self) -> u64 {
        self.elementwise.get()
    }

    /// `2 * MACs + elementwise ops`.
    pub fn flops(&self) -> u64 {
        2 * self.macs() + self.elementwise()
    }

    fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    fn add_elementwise(&self, n: u64) {
        self.elementwise.set(self.elementwise.get() + n);
    }
}

/// Execution context threaded through every block: which convolution kernel
/// to use and, optionally, a counter that observes each executed op.
///
/// A counting context always runs the naive kernels so the MAC tally comes
/// from the reference loop nest itself.
#[derive(Clone, Copy, Debug)]
pub struct Exec<'a> {
    kernel: Kernel,
    counter: Option<&'a OpCounter>,
}

impl Default for Exec<'static> {
    fn default() -> Self {
        Exec::fast()
    }
}

impl Exec<'static> {
    pub fn fast() -> Self {
        Exec {
            kernel: Kernel::Fast,
            counter: None,
        }
    }

    pub fn naive() -> Self {
        Exec {
            kernel: Kernel::Naive,
            counter: None,
        }
    }
}

impl<'a> Exec<'a> {
    pub fn counting(counter: &'a OpCounter) -> Self {
        Exec {
            kernel: Kernel::Naive,
            counter: Some(counter),
        }
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    fn tally(&self, n: usize) {
        if let Some(c) = self.counter {
            c.add_elementwise(n as u64);
        }
    }

    pub fn conv(
        &self,
        x: &Tensor,
        spec: &ConvSpec,
        weights: &Tensor,
        bias: Option<&[f32]>,
    ) -> Result<Tensor> {
        match (self.counter, self.kernel) {
            (Some(c), _) => {
                let (y, macs) = conv2d_naive_counted(x, spec, weights, bias)?;
                c.add_macs(macs);
                if bias.is_some() {
                    c.add_elementwise(y.numel() as u64);
                }
                Ok(y)
            }
            (None, Kernel::Naive) => conv2d_naive(x, spec, weights, bias),
            (None, Kernel::Fast) => conv2d(x, spec, weights, bias),
        }
    }

    pub fn linear(&self, x: &Tensor, weight: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
        let (y, macs) = ops::linear_counted(x, weight, bias)?;
        if let Some(c) = self.counter {
            c.add_macs(macs);
            if bias.is_some() {
                c.add_elementwise(y.numel() as u64);
            }
        }
        Ok(y)
    }

    pub fn unary(&self, x: &Tensor, f: Unary) -> Tensor {
        self.tally(x.numel());
        ops::unary(x, f)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let y = ops::add(a, b)?;
        self.tally(y.numel());
        Ok(y)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let y = ops::mul(a, b)?;
        self.tally(y.numel());
        Ok(y)
    }

    /// Folded batch-norm: one multiply and one add per element.
    pub fn affine(&self, x: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
        let y = ops::affine_channels(x, scale, shift)?;
        self.tally(2 * y.numel());
        Ok(y)
    }

    pub fn maxpool(&self, x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
        let (y, visited) = ops::maxpool_counted(x, kernel, stride, pad)?;
        if let Some(c) = self.counter {
            c.add_elementwise(visited);
        }
        Ok(y)
    }

    pub fn upsample(&self, x: &Tensor, factor: usize) -> Result<Tensor> {
        ops::upsample_nearest(x, factor)
    }

    pub fn concat(&self, parts: &[&Tensor]) -> Result<Tensor> {
        ops::concat_channels(parts)
    }

    pub fn permute(&self, x: &Tensor, order: [usize; 4]) -> Result<Tensor> {
        ops::permute(x, order)
    }
}
