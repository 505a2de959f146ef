use super::units::vector_shape;
use super::weights::{join, Init, ParamEntry, Scope};
use super::{check_channels, BlockParams};
use crate::error::Result;
use crate::tensor::{ConvSpec, Exec, Shape, Tensor, Unary};

/// Global attention: a channel gate (permute, two-layer MLP, sigmoid) then a
/// spatial gate (two grouped 7x7 convs, sigmoid), optionally residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Gam {
    pub channels: usize,
    pub hidden: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub residual: bool,
}

impl Gam {
    pub(crate) fn new(p: &BlockParams) -> Result<Self> {
        let c = p.in_channels;
        let hidden = c / p.gam_ratio;
        let conv1 = ConvSpec::new(c, hidden, 7).groups(p.gam_groups).bias(true);
        let conv2 = ConvSpec::new(hidden, c, 7).groups(p.gam_groups).bias(true);
        conv1.validate()?;
        conv2.validate()?;
        Ok(Gam {
            channels: c,
            hidden,
            conv1,
            conv2,
            residual: p.gam_residual,
        })
    }

    pub fn fc1_shape(&self) -> Shape {
        Shape::new(self.hidden, self.channels, 1, 1)
    }

    pub fn fc2_shape(&self) -> Shape {
        Shape::new(self.channels, self.hidden, 1, 1)
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        let s = x.shape();
        check_channels("GAM", self.channels, s)?;
        let (c, r) = (self.channels, self.hidden);
        let ch = w.sub("channel");
        let sp = w.sub("spatial");

        let rows = ctx
            .permute(x, [0, 2, 3, 1])?
            .reshape(Shape::new(s.n * s.h * s.w, c, 1, 1))?;
        let h = ctx.linear(&rows, ch.tensor("fc1.weight", self.fc1_shape())?, Some(ch.vector("fc1.bias", r)?))?;
        let h = ctx.unary(&h, Unary::Relu);
        let h = ctx.linear(&h, ch.tensor("fc2.weight", self.fc2_shape())?, Some(ch.vector("fc2.bias", c)?))?;
        let h = ctx.permute(&h.reshape(Shape::new(s.n, s.h, s.w, c))?, [0, 3, 1, 2])?;
        let mc = ctx.unary(&h, Unary::Sigmoid);
        let y1 = ctx.mul(x, &mc)?;

        let a = ctx.conv(
            &y1,
            &self.conv1,
            sp.tensor("conv1.weight", self.conv1.weight_shape())?,
            Some(sp.vector("conv1.bias", r)?),
        )?;
        let a = ctx.unary(&a, Unary::Relu);
        let a = ctx.conv(
            &a,
            &self.conv2,
            sp.tensor("conv2.weight", self.conv2.weight_shape())?,
            Some(sp.vector("conv2.bias", c)?),
        )?;
        let ms = ctx.unary(&a, Unary::Sigmoid);
        let y2 = ctx.mul(&y1, &ms)?;
        if self.residual {
            ctx.add(x, &y2)
        } else {
            Ok(y2)
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        check_channels("GAM", self.channels, input)?;
        let mid = self.conv1.output_shape(input)?;
        self.conv2.output_shape(mid)
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        let (c, r) = (self.channels, self.hidden);
        let mut push = |path: &str, shape: Shape, fan_in: usize| {
            out.push(ParamEntry {
                path: join(prefix, path),
                shape,
                init: Init::Uniform { fan_in },
            })
        };
        push("channel.fc1.weight", self.fc1_shape(), c);
        push("channel.fc1.bias", vector_shape(r), c);
        push("channel.fc2.weight", self.fc2_shape(), r);
        push("channel.fc2.bias", vector_shape(c), r);
        let f1 = super::units::fan_in(&self.conv1);
        let f2 = super::units::fan_in(&self.conv2);
        push("spatial.conv1.weight", self.conv1.weight_shape(), f1);
        push("spatial.conv1.bias", vector_shape(r), f1);
        push("spatial.conv2.weight", self.conv2.weight_shape(), f2);
        push("spatial.conv2.bias", vector_shape(c), f2);
    }
}
