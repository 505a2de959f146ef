use super::weights::{join, Init, ParamEntry, Scope};
use super::{check_channels, Activation};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Exec, Shape, Tensor, Unary};

pub(crate) fn activate(ctx: &Exec, x: Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Silu => ctx.unary(&x, Unary::Silu),
        Activation::Relu => ctx.unary(&x, Unary::Relu),
        Activation::Identity => x,
    }
}

pub(crate) fn fan_in(spec: &ConvSpec) -> usize {
    spec.in_channels / spec.groups * spec.kernel_h * spec.kernel_w
}

pub(crate) fn vector_shape(len: usize) -> Shape {
    Shape::new(len, 1, 1, 1)
}

/// Bias-free convolution, folded batch-norm affine, activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBnAct {
    pub spec: ConvSpec,
    pub act: Activation,
}

impl ConvBnAct {
    pub fn new(spec: ConvSpec, act: Activation) -> Result<Self> {
        let spec = spec.bias(false);
        spec.validate()?;
        Ok(ConvBnAct { spec, act })
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        let weight = w.tensor("conv.weight", self.spec.weight_shape())?;
        let scale = w.vector("bn.scale", self.spec.out_channels)?;
        let shift = w.vector("bn.shift", self.spec.out_channels)?;
        let y = ctx.conv(x, &self.spec, weight, None)?;
        let y = ctx.affine(&y, scale, shift)?;
        Ok(activate(ctx, y, self.act))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.spec.output_shape(input)
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        let c = self.spec.out_channels;
        out.push(ParamEntry {
            path: join(prefix, "conv.weight"),
            shape: self.spec.weight_shape(),
            init: Init::Uniform {
                fan_in: fan_in(&self.spec),
            },
        });
        out.push(ParamEntry {
            path: join(prefix, "bn.scale"),
            shape: vector_shape(c),
            init: Init::Ones,
        });
        out.push(ParamEntry {
            path: join(prefix, "bn.shift"),
            shape: vector_shape(c),
            init: Init::Zeros,
        });
    }
}

/// `1 x k` conv at stride 1 followed by `k x 1` conv at stride `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossConv {
    pub cv1: ConvBnAct,
    pub cv2: ConvBnAct,
    pub add: bool,
}

impl CrossConv {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        s: usize,
        shortcut: bool,
        act: Activation,
    ) -> Result<Self> {
        if k == 0 || s == 0 {
            return Err(Error::config("CrossConv kernel and stride must be >= 1"));
        }
        let hidden = cout;
        let cv1 = ConvBnAct::new(
            ConvSpec::new(cin, hidden, 1).kernel_hw(1, k).pad_hw(0, k / 2),
            act,
        )?;
        let cv2 = ConvBnAct::new(
            ConvSpec::new(hidden, cout, 1)
                .kernel_hw(k, 1)
                .pad_hw(k / 2, 0)
                .stride(s),
            act,
        )?;
        Ok(CrossConv {
            cv1,
            cv2,
            add: shortcut && cin == cout && s == 1,
        })
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        let y = self.cv1.forward(ctx, x, &w.sub("cv1"))?;
        let y = self.cv2.forward(ctx, &y, &w.sub("cv2"))?;
        if self.add {
            ctx.add(x, &y)
        } else {
            Ok(y)
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let s = self.cv2.output_shape(self.cv1.output_shape(input)?)?;
        if self.add && s != input {
            return Err(Error::shape("CrossConv", "shortcut", input.numel(), s.numel()));
        }
        Ok(s)
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        self.cv1.layout(&join(prefix, "cv1"), out);
        self.cv2.layout(&join(prefix, "cv2"), out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BottleneckMid {
    Conv(ConvBnAct),
    Cross(CrossConv),
}

/// 1x1 reduce, 3x3 (or CrossConv) expand, additive shortcut when enabled and
/// channel counts agree.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub cv1: ConvBnAct,
    pub cv2: BottleneckMid,
    pub add: bool,
}

impl Bottleneck {
    pub fn standard(cin: usize, cout: usize, shortcut: bool, act: Activation) -> Result<Self> {
        Ok(Bottleneck {
            cv1: ConvBnAct::new(ConvSpec::new(cin, cout, 1), act)?,
            cv2: BottleneckMid::Conv(ConvBnAct::new(ConvSpec::new(cout, cout, 3), act)?),
            add: shortcut && cin == cout,
        })
    }

    pub fn cross(cin: usize, cout: usize, shortcut: bool, act: Activation) -> Result<Self> {
        Ok(Bottleneck {
            cv1: ConvBnAct::new(ConvSpec::new(cin, cout, 1), act)?,
            cv2: BottleneckMid::Cross(CrossConv::new(cout, cout, 3, 1, false, act)?),
            add: shortcut && cin == cout,
        })
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        let y = self.cv1.forward(ctx, x, &w.sub("cv1"))?;
        let y = match &self.cv2 {
            BottleneckMid::Conv(c) => c.forward(ctx, &y, &w.sub("cv2"))?,
            BottleneckMid::Cross(c) => c.forward(ctx, &y, &w.sub("cv2"))?,
        };
        if self.add {
            ctx.add(x, &y)
        } else {
            Ok(y)
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let mid = self.cv1.output_shape(input)?;
        match &self.cv2 {
            BottleneckMid::Conv(c) => c.output_shape(mid),
            BottleneckMid::Cross(c) => c.output_shape(mid),
        }
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        self.cv1.layout(&join(prefix, "cv1"), out);
        match &self.cv2 {
            BottleneckMid::Conv(c) => c.layout(&join(prefix, "cv2"), out),
            BottleneckMid::Cross(c) => c.layout(&join(prefix, "cv2"), out),
        }
    }
}

/// Primary conv to half the output maps, depthwise 5x5 over those for the
/// other half, concatenated primary first.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostConv {
    pub cv1: ConvBnAct,
    pub cv2: ConvBnAct,
}

impl GhostConv {
    pub fn new(cin: usize, cout: usize, k: usize, s: usize, act: Activation) -> Result<Self> {
        if !cout.is_multiple_of(2) {
            return Err(Error::config(format!(
                "GhostConv needs even out_channels, got {cout}"
            )));
        }
        let half = cout / 2;
        Ok(GhostConv {
            cv1: ConvBnAct::new(ConvSpec::new(cin, half, k).stride(s), act)?,
            cv2: ConvBnAct::new(ConvSpec::depthwise(half, 5), act)?,
        })
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        let y = self.cv1.forward(ctx, x, &w.sub("cv1"))?;
        let z = self.cv2.forward(ctx, &y, &w.sub("cv2"))?;
        ctx.concat(&[&y, &z])
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let y = self.cv1.output_shape(input)?;
        let z = self.cv2.output_shape(y)?;
        Ok(y.with_c(y.c + z.c))
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        self.cv1.layout(&join(prefix, "cv1"), out);
        self.cv2.layout(&join(prefix, "cv2"), out);
    }
}

/// GhostConv, optional stride-2 depthwise, GhostConv without activation;
/// identity shortcut at stride 1, depthwise + 1x1 shortcut at stride 2.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostBottleneck {
    pub in_channels: usize,
    pub ghost1: GhostConv,
    pub down: Option<ConvBnAct>,
    pub ghost2: GhostConv,
    pub shortcut: Option<(ConvBnAct, ConvBnAct)>,
}

impl GhostBottleneck {
    pub fn new(cin: usize, cout: usize, k: usize, s: usize, act: Activation) -> Result<Self> {
        if s != 1 && s != 2 {
            return Err(Error::config(format!(
                "GhostBottleneck stride must be 1 or 2, got {s}"
            )));
        }
        if !cout.is_multiple_of(2) {
            return Err(Error::config(format!(
                "GhostBottleneck needs even out_channels, got {cout}"
            )));
        }
        let hidden = cout / 2;
        let ghost1 = GhostConv::new(cin, hidden, 1, 1, act)?;
        let ghost2 = GhostConv::new(hidden, cout, 1, 1, Activation::Identity)?;
        let (down, shortcut) = if s == 2 {
            let down = ConvBnAct::new(
                ConvSpec::depthwise(hidden, k).stride(2),
                Activation::Identity,
            )?;
            let sc = (
                ConvBnAct::new(ConvSpec::depthwise(cin, k).stride(2), Activation::Identity)?,
                ConvBnAct::new(ConvSpec::new(cin, cout, 1), Activation::Identity)?,
            );
            (Some(down), Some(sc))
        } else {
            if cin != cout {
                return Err(Error::shape("GhostBottleneck", "identity shortcut channels", cin, cout));
            }
            (None, None)
        };
        Ok(GhostBottleneck {
            in_channels: cin,
            ghost1,
            down,
            ghost2,
            shortcut,
        })
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        check_channels("GhostBottleneck", self.in_channels, x.shape())?;
        let mut y = self.ghost1.forward(ctx, x, &w.sub("conv.0"))?;
        if let Some(d) = &self.down {
            y = d.forward(ctx, &y, &w.sub("conv.1"))?;
        }
        let y = self.ghost2.forward(ctx, &y, &w.sub("conv.2"))?;
        let skip = match &self.shortcut {
            Some((dw, pw)) => {
                let s = dw.forward(ctx, x, &w.sub("shortcut.0"))?;
                pw.forward(ctx, &s, &w.sub("shortcut.1"))?
            }
            None => x.clone(),
        };
        if skip.shape() != y.shape() {
            return Err(Error::shape("GhostBottleneck", "shortcut", y.numel(), skip.numel()));
        }
        ctx.add(&y, &skip)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        check_channels("GhostBottleneck", self.in_channels, input)?;
        let mut s = self.ghost1.output_shape(input)?;
        if let Some(d) = &self.down {
            s = d.output_shape(s)?;
        }
        let main = self.ghost2.output_shape(s)?;
        let skip = match &self.shortcut {
            Some((dw, pw)) => pw.output_shape(dw.output_shape(input)?)?,
            None => input,
        };
        if skip != main {
            return Err(Error::shape("GhostBottleneck", "shortcut", main.numel(), skip.numel()));
        }
        Ok(main)
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        self.ghost1.layout(&join(prefix, "conv.0"), out);
        if let Some(d) = &self.down {
            d.layout(&join(prefix, "conv.1"), out);
        }
        self.ghost2.layout(&join(prefix, "conv.2"), out);
        if let Some((dw, pw)) = &self.shortcut {
            dw.layout(&join(prefix, "shortcut.0"), out);
            pw.layout(&join(prefix, "shortcut.1"), out);
        }
    }
}
