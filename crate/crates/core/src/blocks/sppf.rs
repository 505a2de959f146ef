use super::units::ConvBnAct;
use super::weights::{join, ParamEntry, Scope};
use super::Activation;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Exec, Shape, Tensor};

/// 1x1 reduce to half width, three chained `k x k` stride-1 maxpools,
/// concat of the four maps, 1x1 to `out_channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sppf {
    pub cv1: ConvBnAct,
    pub cv2: ConvBnAct,
    pub pool: usize,
}

impl Sppf {
    pub(crate) fn new(cin: usize, cout: usize, k: usize, act: Activation) -> Result<Self> {
        let hidden = cin / 2;
        if hidden == 0 || k.is_multiple_of(2) {
            return Err(Error::config(format!(
                "SPPF needs in_channels >= 2 and an odd pool size, got {cin}, {k}"
            )));
        }
        Ok(Sppf {
            cv1: ConvBnAct::new(ConvSpec::new(cin, hidden, 1), act)?,
            cv2: ConvBnAct::new(ConvSpec::new(4 * hidden, cout, 1), act)?,
            pool: k,
        })
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        let (k, p) = (self.pool, self.pool / 2);
        let a = self.cv1.forward(ctx, x, &w.sub("cv1"))?;
        let b = ctx.maxpool(&a, k, 1, p)?;
        let c = ctx.maxpool(&b, k, 1, p)?;
        let d = ctx.maxpool(&c, k, 1, p)?;
        let cat = ctx.concat(&[&a, &b, &c, &d])?;
        self.cv2.forward(ctx, &cat, &w.sub("cv2"))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let a = self.cv1.output_shape(input)?;
        self.cv2.output_shape(a.with_c(4 * a.c))
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        self.cv1.layout(&join(prefix, "cv1"), out);
        self.cv2.layout(&join(prefix, "cv2"), out);
    }
}
