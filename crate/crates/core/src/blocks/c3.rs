use super::units::{Bottleneck, ConvBnAct, GhostBottleneck};
use super::weights::{join, ParamEntry, Scope};
use super::{check_channels, BlockKind, BlockParams};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Exec, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum C3Inner {
    Bottleneck(Bottleneck),
    Ghost(GhostBottleneck),
}

impl C3Inner {
    fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        match self {
            C3Inner::Bottleneck(b) => b.forward(ctx, x, w),
            C3Inner::Ghost(b) => b.forward(ctx, x, w),
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            C3Inner::Bottleneck(b) => b.output_shape(input),
            C3Inner::Ghost(b) => b.output_shape(input),
        }
    }

    fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        match self {
            C3Inner::Bottleneck(b) => b.layout(prefix, out),
            C3Inner::Ghost(b) => b.layout(prefix, out),
        }
    }
}

/// `cv3(concat(m(cv1(x)), cv2(x)))`, shared by C3, C3Ghost and C3CrossConv.
#[derive(Clone, Debug, PartialEq)]
pub struct C3Block {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub cv1: ConvBnAct,
    pub cv2: ConvBnAct,
    pub cv3: ConvBnAct,
    pub m: Vec<C3Inner>,
}

impl C3Block {
    pub(crate) fn new(p: &BlockParams, hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config(format!(
                "{}: hidden width rounds to zero",
                p.kind
            )));
        }
        let act = p.activation;
        let m = (0..p.repeats)
            .map(|_| match p.kind {
                BlockKind::C3 => Bottleneck::standard(hidden, hidden, p.shortcut, act)
                    .map(C3Inner::Bottleneck),
                BlockKind::C3CrossConv => {
                    Bottleneck::cross(hidden, hidden, p.shortcut, act).map(C3Inner::Bottleneck)
                }
                BlockKind::C3Ghost => {
                    GhostBottleneck::new(hidden, hidden, 3, 1, act).map(C3Inner::Ghost)
                }
                other => Err(Error::config(format!("{other} is not a C3-family block"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(C3Block {
            kind: p.kind,
            in_channels: p.in_channels,
            cv1: ConvBnAct::new(ConvSpec::new(p.in_channels, hidden, 1), act)?,
            cv2: ConvBnAct::new(ConvSpec::new(p.in_channels, hidden, 1), act)?,
            cv3: ConvBnAct::new(ConvSpec::new(2 * hidden, p.out_channels, 1), act)?,
            m,
        })
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        check_channels(self.kind.name(), self.in_channels, x.shape())?;
        let mut a = self.cv1.forward(ctx, x, &w.sub("cv1"))?;
        for (i, b) in self.m.iter().enumerate() {
            a = b.forward(ctx, &a, &w.sub(&format!("m.{i}")))?;
        }
        let b = self.cv2.forward(ctx, x, &w.sub("cv2"))?;
        let cat = ctx.concat(&[&a, &b])?;
        self.cv3.forward(ctx, &cat, &w.sub("cv3"))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        check_channels(self.kind.name(), self.in_channels, input)?;
        let a = self
            .m
            .iter()
            .try_fold(self.cv1.output_shape(input)?, |s, b| b.output_shape(s))?;
        let b = self.cv2.output_shape(input)?;
        self.cv3.output_shape(a.with_c(a.c + b.c))
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        self.cv1.layout(&join(prefix, "cv1"), out);
        self.cv2.layout(&join(prefix, "cv2"), out);
        self.cv3.layout(&join(prefix, "cv3"), out);
        for (i, b) in self.m.iter().enumerate() {
            b.layout(&join(prefix, &format!("m.{i}")), out);
        }
    }
}
