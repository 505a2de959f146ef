use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Relu,
    Silu,
}

#[inline]
pub(crate) fn sigmoid_f32(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn unary(x: &Tensor, f: Unary) -> Tensor {
    match f {
        Unary::Sigmoid => x.map(sigmoid_f32),
        Unary::Relu => x.map(|v| v.max(0.0)),
        Unary::Silu => x.map(|v| v * sigmoid_f32(v)),
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    unary(x, Unary::Sigmoid)
}

pub fn relu(x: &Tensor) -> Tensor {
    unary(x, Unary::Relu)
}

pub fn silu(x: &Tensor) -> Tensor {
    unary(x, Unary::Silu)
}

fn zip_same(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    for (dim, (x, y)) in ["n", "c", "h", "w"].iter().zip(sa.dims().into_iter().zip(sb.dims())) {
        if x != y {
            return Err(Error::shape(op, *dim, x, y));
        }
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(sa, data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("mul", a, b, |x, y| x * y)
}

/// `y[n, c] = x[n, c] * scale[c] + shift[c]`.
pub fn affine_channels(x: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let s = x.shape();
    if scale.len() != s.c {
        return Err(Error::shape("affine", "scale length", s.c, scale.len()));
    }
    if shift.len() != s.c {
        return Err(Error::shape("affine", "shift length", s.c, shift.len()));
    }
    let plane = s.plane();
    let mut data = x.data().to_vec();
    for (i, chunk) in data.chunks_mut(plane).enumerate() {
        let c = i % s.c;
        let (k, b) = (scale[c], shift[c]);
        for v in chunk {
            *v = *v * k + b;
        }
    }
    Tensor::from_vec(s, data)
}

pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    let s = x.shape();
    let out = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let src = x.data();
    let mut data = Vec::with_capacity(out.numel());
    for plane in src.chunks(s.plane()) {
        for row in plane.chunks(s.w) {
            let start = data.len();
            for &v in row {
                data.extend(std::iter::repeat_n(v, factor));
            }
            for _ in 1..factor {
                data.extend_from_within(start..start + out.w);
            }
        }
    }
    Tensor::from_vec(out, data)
}

/// Channel concatenation; inputs keep their order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concat of zero tensors"))?
        .shape();
    for p in &parts[1..] {
        let s = p.shape();
        if s.n != first.n {
            return Err(Error::shape("concat", "n", first.n, s.n));
        }
        if s.h != first.h {
            return Err(Error::shape("concat", "h", first.h, s.h));
        }
        if s.w != first.w {
            return Err(Error::shape("concat", "w", first.w, s.w));
        }
    }
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    let out = first.with_c(c);
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..first.n {
        for p in parts {
            let per = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(out, data)
}

/// Max pooling with `-inf` padding. Also returns how many input elements
/// were visited (one comparison each).
pub(crate) fn maxpool_counted(
    x: &Tensor,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, u64)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::config("maxpool kernel and stride must be >= 1"));
    }
    let s = x.shape();
    if s.h + 2 * pad < kernel || s.w + 2 * pad < kernel {
        return Err(Error::config("maxpool kernel larger than padded input"));
    }
    let ho = (s.h + 2 * pad - kernel) / stride + 1;
    let wo = (s.w + 2 * pad - kernel) / stride + 1;
    let out = Shape::new(s.n, s.c, ho, wo);
    let mut data = Vec::with_capacity(out.numel());
    let mut visited = 0u64;
    for plane in x.data().chunks(s.plane()) {
        for oy in 0..ho {
            let y0 = (oy * stride) as isize - pad as isize;
            let ys = y0.max(0) as usize..((y0 + kernel as isize).min(s.h as isize)) as usize;
            for ox in 0..wo {
                let x0 = (ox * stride) as isize - pad as isize;
                let xs = x0.max(0) as usize..((x0 + kernel as isize).min(s.w as isize)) as usize;
                let mut m = f32::NEG_INFINITY;
                for iy in ys.clone() {
                    for &v in &plane[iy * s.w + xs.start..iy * s.w + xs.end] {
                        m = m.max(v);
                    }
                }
                visited += (ys.len() * xs.len()) as u64;
                data.push(m);
            }
        }
    }
    Ok((Tensor::from_vec(out, data)?, visited))
}

pub fn maxpool(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    maxpool_counted(x, kernel, stride, pad).map(|(t, _)| t)
}

/// Reorder axes: output axis `i` is input axis `order[i]`.
pub fn permute(x: &Tensor, order: [usize; 4]) -> Result<Tensor> {
    let mut seen = [false; 4];
    for &a in &order {
        if a > 3 || seen[a] {
            return Err(Error::config(format!("permute order {order:?} is not a permutation")));
        }
        seen[a] = true;
    }
    let in_dims = x.shape().dims();
    let out_dims = order.map(|a| in_dims[a]);
    let mut in_strides = [0usize; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        in_strides[i] = acc;
        acc *= in_dims[i];
    }
    let strides = order.map(|a| in_strides[a]);
    let src = x.data();
    let mut data = Vec::with_capacity(x.numel());
    for i0 in 0..out_dims[0] {
        for i1 in 0..out_dims[1] {
            for i2 in 0..out_dims[2] {
                let base = i0 * strides[0] + i1 * strides[1] + i2 * strides[2];
                for i3 in 0..out_dims[3] {
                    data.push(src[base + i3 * strides[3]]);
                }
            }
        }
    }
    Tensor::from_vec(Shape::from_dims(out_dims), data)
}

/// Fully-connected layer. `x` is read as a `(x.n, c*h*w)` matrix and
/// `weight` as `(out, in)`; the result is `(x.n, out, 1, 1)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    linear_counted(x, weight, bias).map(|(t, _)| t)
}

pub(crate) fn linear_counted(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
) -> Result<(Tensor, u64)> {
    let rows = x.shape().n;
    let fin = x.numel() / rows;
    let fout = weight.shape().n;
    let w_in = weight.numel() / fout;
    if w_in != fin {
        return Err(Error::shape("linear", "in_features", w_in, fin));
    }
    if let Some(b) = bias {
        if b.len() != fout {
            return Err(Error::shape("linear", "bias length", fout, b.len()));
        }
    }
    let (xd, wd) = (x.data(), weight.data());
    let mut data = Vec::with_capacity(rows * fout);
    for r in 0..rows {
        let xr = &xd[r * fin..(r + 1) * fin];
        for o in 0..fout {
            let wr = &wd[o * fin..(o + 1) * fin];
            let mut acc: f64 = xr.iter().zip(wr).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            if let Some(b) = bias {
                acc += f64::from(b[o]);
            }
            data.push(acc as f32);
        }
    }
    let macs = (rows * fin * fout) as u64;
    Ok((Tensor::from_vec(Shape::new(rows, fout, 1, 1), data)?, macs))
}
