use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding `k / 2`, one group, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: 1,
            stride_w: 1,
            pad_h: kernel / 2,
            pad_w: kernel / 2,
            groups: 1,
            has_bias: false,
        }
    }

    pub fn kernel_hw(mut self, kh: usize, kw: usize) -> Self {
        self.kernel_h = kh;
        self.kernel_w = kw;
        self.pad_h = kh / 2;
        self.pad_w = kw / 2;
        self
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride_h = s;
        self.stride_w = s;
        self
    }

    pub fn stride_hw(mut self, sh: usize, sw: usize) -> Self {
        self.stride_h = sh;
        self.stride_w = sw;
        self
    }

    pub fn pad(mut self, p: usize) -> Self {
        self.pad_h = p;
        self.pad_w = p;
        self
    }

    pub fn pad_hw(mut self, ph: usize, pw: usize) -> Self {
        self.pad_h = ph;
        self.pad_w = pw;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// Depthwise: one filter per channel.
    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        ConvSpec::new(channels, channels, kernel).groups(channels)
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups.max(1),
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.has_bias { self.out_channels } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            in_channels: cin,
            out_channels: cout,
            groups: g,
            ..
        } = *self;
        if cin == 0 || cout == 0 || g == 0 {
            return Err(Error::config("conv channels and groups must be >= 1"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::config("conv kernel and stride must be >= 1"));
        }
        if cin % g != 0 || cout % g != 0 {
            return Err(Error::config(format!(
                "conv groups {g} must divide in_channels {cin} and out_channels {cout}"
            )));
        }
        Ok(())
    }

    /// `floor((in + 2p - k) / s) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |size: usize, k: usize, s: usize, p: usize, name: &str| {
            let padded = size + 2 * p;
            if padded < k {
                return Err(Error::config(format!(
                    "conv kernel {k} larger than padded {name} {padded}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis(h, self.kernel_h, self.stride_h, self.pad_h, "height")?,
            axis(w, self.kernel_w, self.stride_w, self.pad_w, "width")?,
        ))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::shape("conv2d", "input channels", self.in_channels, input.c));
        }
        let (ho, wo) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, ho, wo))
    }

    /// Multiply-accumulates for one forward pass over `input`.
    pub fn macs(&self, input: Shape) -> Result<u64> {
        let out = self.output_shape(input)?;
        let per_out = (self.in_channels / self.groups * self.kernel_h * self.kernel_w) as u64;
        Ok(out.numel() as u64 * per_out)
    }

    fn check(&self, input: &Tensor, weights: &Tensor, bias: Option<&[f32]>) -> Result<Shape> {
        let out = self.output_shape(input.shape())?;
        let expected = self.weight_shape();
        let actual = weights.shape();
        for (dim, (e, a)) in ["out_channels", "in_channels/groups", "kernel_h", "kernel_w"]
            .iter()
            .zip(expected.dims().into_iter().zip(actual.dims()))
        {
            if e != a {
                return Err(Error::shape("conv2d", format!("weight {dim}"), e, a));
            }
        }
        match (self.has_bias, bias) {
            (true, Some(b)) if b.len() != self.out_channels => {
                Err(Error::shape("conv2d", "bias length", self.out_channels, b.len()))
            }
            (true, None) => Err(Error::config("conv spec has_bias but no bias given")),
            (false, Some(_)) => Err(Error::config("bias given for a bias-free conv spec")),
            _ => Ok(out),
        }
    }
}

/// Reference convolution: a direct loop nest with a bounds test per tap.
pub fn conv2d_naive(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&[f32]>,
) -> Result<Tensor> {
    conv2d_naive_counted(input, spec, weights, bias).map(|(t, _)| t)
}

/// As [`conv2d_naive`], also returning the number of multiply-accumulates
/// the loop nest executed. Taps that land in the zero padding count as a
/// MAC against the pad value.
pub(crate) fn conv2d_naive_counted(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&[f32]>,
) -> Result<(Tensor, u64)> {
    let out_shape = spec.check(input, weights, bias)?;
    let s = input.shape();
    let x = input.data();
    let wt = weights.data();
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let mut out = vec![0f32; out_shape.numel()];
    let mut macs = 0u64;
    for n in 0..s.n {
        for oc in 0..spec.out_channels {
            let g = oc / cout_g;
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut acc = 0f64;
                    for icg in 0..cin_g {
                        let ic = g * cin_g + icg;
                        for ky in 0..spec.kernel_h {
                            for kx in 0..spec.kernel_w {
                                let iy = (oy * spec.stride_h + ky) as isize - spec.pad_h as isize;
                                let ix = (ox * spec.stride_w + kx) as isize - spec.pad_w as isize;
                                macs += 1;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let xv = x[((n * s.c + ic) * s.h + iy as usize) * s.w + ix as usize];
                                let wv = wt[((oc * cin_g + icg) * spec.kernel_h + ky) * spec.kernel_w
                                    + kx];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += f64::from(b[oc]);
                    }
                    out[((n * spec.out_channels + oc) * out_shape.h + oy) * out_shape.w + ox] =
                        acc as f32;
                }
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, macs))
}

/// Row-blocked convolution with 64-bit accumulation.
///
/// For every output row the valid output-column range of each kernel tap is
/// computed up front, so the innermost loop is a branch-free strided
/// multiply-add over one input row.
pub fn conv2d(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&[f32]>,
) -> Result<Tensor> {
    let out_shape = spec.check(input, weights, bias)?;
    let s = input.shape();
    let x = input.data();
    let wt = weights.data();
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (sh, sw) = (spec.stride_h, spec.stride_w);
    let (ph, pw) = (spec.pad_h, spec.pad_w);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (ho, wo) = (out_shape.h, out_shape.w);

    // Valid [lo, hi) output columns per kx.
    let col_ranges: Vec<(usize, usize)> = (0..kw)
        .map(|kx| {
            let lo = if kx >= pw { 0 } else { (pw - kx).div_ceil(sw) };
            let hi = if s.w + pw > kx {
                ((s.w - 1 + pw - kx) / sw + 1).min(wo)
            } else {
                0
            };
            (lo.min(hi), hi)
        })
        .collect();

    let mut out = vec![0f32; out_shape.numel()];
    let mut acc = vec![0f64; wo];
    for n in 0..s.n {
        for oc in 0..spec.out_channels {
            let g = oc / cout_g;
            let b0 = bias.map_or(0.0, |b| f64::from(b[oc]));
            let w_oc = &wt[oc * cin_g * kh * kw..(oc + 1) * cin_g * kh * kw];
            for oy in 0..ho {
                acc.fill(b0);
                for icg in 0..cin_g {
                    let ic = g * cin_g + icg;
                    let plane = &x[(n * s.c + ic) * s.h * s.w..(n * s.c + ic + 1) * s.h * s.w];
                    for ky in 0..kh {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                        let w_row = &w_oc[(icg * kh + ky) * kw..(icg * kh + ky + 1) * kw];
                        for (kx, &wv) in w_row.iter().enumerate() {
                            let (lo, hi) = col_ranges[kx];
                            if lo >= hi {
                                continue;
                            }
                            let wv = f64::from(wv);
                            let start = lo * sw + kx - pw;
                            if sw == 1 {
                                let src = &row[start..start + (hi - lo)];
                                for (a, &v) in acc[lo..hi].iter_mut().zip(src) {
                                    *a += wv * f64::from(v);
                                }
                            } else {
                                for (j, a) in acc[lo..hi].iter_mut().enumerate() {
                                    *a += wv * f64::from(row[start + j * sw]);
                                }
                            }
                        }
                    }
                }
                let dst = &mut out[((n * spec.out_channels + oc) * ho + oy) * wo..][..wo];
                for (d, &a) in dst.iter_mut().zip(&acc) {
                    *d = a as f32;
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |[_, _, h, w]| (h * 4 + w) as f32);
        let spec = ConvSpec::new(1, 1, 1);
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        assert_eq!(conv2d(&x, &spec, &w, None).unwrap(), x);
        assert_eq!(conv2d_naive(&x, &spec, &w, None).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::zeros(Shape::new(1, 3, 8, 8));
        let spec = ConvSpec::new(3, 5, 3);
        let w = Tensor::from_fn(spec.weight_shape(), |[a, b, c, d]| (a + 2 * b + c * d) as f32 - 3.5);
        let y = conv2d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 5, 8, 8));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_ones_kernel_sums_input() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = ConvSpec::new(1, 1, 2).pad(0);
        let w = Tensor::full(spec.weight_shape(), 1.0);
        let y = conv2d_naive(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[10.0]);
        assert_eq!(conv2d(&x, &spec, &w, None).unwrap(), y);
    }

    #[test]
    fn weight_shape_mismatch_names_dimension() {
        let x = Tensor::zeros(Shape::new(1, 3, 8, 8));
        let spec = ConvSpec::new(3, 4, 3);
        let w = Tensor::zeros(Shape::new(4, 3, 3, 2));
        let err = conv2d(&x, &spec, &w, None).unwrap_err().to_string();
        assert!(err.contains("kernel_w"), "{err}");
        let x2 = Tensor::zeros(Shape::new(1, 2, 8, 8));
        let err = conv2d(&x2, &spec, &Tensor::zeros(spec.weight_shape()), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("input channels"), "{err}");
    }

    #[test]
    fn kernel_larger_than_padded_input_is_config_error() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let spec = ConvSpec::new(1, 1, 5).pad(0);
        let err = conv2d(&x, &spec, &Tensor::zeros(spec.weight_shape()), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn groups_must_divide_channels() {
        assert!(ConvSpec::new(6, 4, 3).groups(4).validate().is_err());
        assert!(ConvSpec::new(8, 4, 3).groups(4).validate().is_ok());
    }

    #[test]
    fn output_size_matches_floor_formula() {
        let spec = ConvSpec::new(1, 1, 3).stride(2).pad(1);
        assert_eq!(spec.output_hw(9, 9).unwrap(), (5, 5));
        let stem = ConvSpec::new(3, 32, 6).stride(2).pad(2);
        assert_eq!(stem.output_hw(640, 640).unwrap(), (320, 320));
    }

    #[test]
    fn naive_counts_padded_taps() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let spec = ConvSpec::new(1, 1, 3);
        let w = Tensor::full(spec.weight_shape(), 1.0);
        let (y, macs) = conv2d_naive_counted(&x, &spec, &w, None).unwrap();
        assert_eq!(macs, 9 * 9);
        assert_eq!(macs, spec.macs(x.shape()).unwrap());
        assert_eq!(y.get([0, 0, 1, 1]), 9.0);
    }
}
