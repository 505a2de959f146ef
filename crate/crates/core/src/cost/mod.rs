//! Parameter and FLOP accounting.
//!
//! FLOPs are `2 * MACs` for every convolution and fully-connected layer
//! (padded taps included) plus one per elementwise op: bias add, activation,
//! residual add, gating multiply, one compare per visited maxpool element,
//! and two per element for the folded batch-norm affine. Upsample, concat
//! and permute are free. [`analyze`] evaluates these counts in closed form;
//! [`count_flops_empirical`] observes them from the instrumented executor.

mod formulas;
mod report;

use serde::Serialize;

use crate::blocks::{
    Activation, Block, BlockWeights, Bottleneck, BottleneckMid, C3Block, C3Inner, ConvBnAct,
    CrossConv, Gam, GhostBottleneck, GhostConv, Sppf,
};
use crate::error::{Error, Result};
use crate::model::{build_model, DetectHead, ModelConfig, Source, WeightSource, INPUT_CHANNELS};
use crate::tensor::{ConvSpec, Exec, OpCounter, Shape, Tensor};

pub use formulas::{
    formula_comparison, formula_cross, formula_standard, FormulaComparison, FormulaCost,
};
pub use report::{diff_reports, CostDiffRow, CostReport, CostRow, FLOP_CONVENTION};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
}

impl Cost {
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.elementwise
    }

    fn ew(n: usize) -> Cost {
        Cost {
            elementwise: n as u64,
            ..Cost::default()
        }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            macs: self.macs + o.macs,
            elementwise: self.elementwise + o.elementwise,
        }
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

/// Closed-form cost of one unit applied to `input`, with its output shape.
pub trait CostModel {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)>;
}

fn conv_cost(spec: &ConvSpec, input: Shape) -> Result<(Shape, Cost)> {
    let out = spec.output_shape(input)?;
    let bias = if spec.has_bias { out.numel() } else { 0 };
    Ok((
        out,
        Cost {
            params: spec.param_count() as u64,
            macs: spec.macs(input)?,
            elementwise: bias as u64,
        },
    ))
}

/// Input elements visited by a `k x k` stride-`s` pool with padding `p`
/// along one axis, summed over output positions.
fn pool_axis_visits(size: usize, k: usize, s: usize, p: usize) -> u64 {
    let out = (size + 2 * p - k) / s + 1;
    (0..out)
        .map(|o| {
            let lo = (o * s) as i64 - p as i64;
            let hi = (lo + k as i64).min(size as i64);
            (hi - lo.max(0)).max(0) as u64
        })
        .sum()
}

fn pool_visits(input: Shape, k: usize, p: usize) -> u64 {
    (input.n * input.c) as u64 * pool_axis_visits(input.h, k, 1, p) * pool_axis_visits(input.w, k, 1, p)
}

impl CostModel for ConvBnAct {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        let (out, mut c) = conv_cost(&self.spec, input)?;
        c.params += 2 * self.spec.out_channels as u64;
        c.elementwise += 2 * out.numel() as u64;
        if self.act != Activation::Identity {
            c.elementwise += out.numel() as u64;
        }
        Ok((out, c))
    }
}

impl CostModel for CrossConv {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        let (mid, a) = self.cv1.cost(input)?;
        let (out, b) = self.cv2.cost(mid)?;
        let add = if self.add { Cost::ew(out.numel()) } else { Cost::default() };
        Ok((out, a + b + add))
    }
}

impl CostModel for Bottleneck {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        let (mid, a) = self.cv1.cost(input)?;
        let (out, b) = match &self.cv2 {
            BottleneckMid::Conv(c) => c.cost(mid)?,
            BottleneckMid::Cross(c) => c.cost(mid)?,
        };
        let add = if self.add { Cost::ew(out.numel()) } else { Cost::default() };
        Ok((out, a + b + add))
    }
}

impl CostModel for GhostConv {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        let (y, a) = self.cv1.cost(input)?;
        let (z, b) = self.cv2.cost(y)?;
        Ok((y.with_c(y.c + z.c), a + b))
    }
}

impl CostModel for GhostBottleneck {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        let (mut s, mut total) = self.ghost1.cost(input)?;
        if let Some(d) = &self.down {
            let (s2, c) = d.cost(s)?;
            s = s2;
            total += c;
        }
        let (out, c) = self.ghost2.cost(s)?;
        total += c;
        if let Some((dw, pw)) = &self.shortcut {
            let (s1, a) = dw.cost(input)?;
            let (_, b) = pw.cost(s1)?;
            total += a + b;
        }
        Ok((out, total + Cost::ew(out.numel())))
    }
}

impl CostModel for C3Block {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        let (mut a, mut total) = self.cv1.cost(input)?;
        for m in &self.m {
            let (s, c) = match m {
                C3Inner::Bottleneck(b) => b.cost(a)?,
                C3Inner::Ghost(b) => b.cost(a)?,
            };
            a = s;
            total += c;
        }
        let (b, c2) = self.cv2.cost(input)?;
        let (out, c3) = self.cv3.cost(a.with_c(a.c + b.c))?;
        Ok((out, total + c2 + c3))
    }
}

impl CostModel for Gam {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        if input.c != self.channels {
            return Err(Error::shape("GAM", "input channels", self.channels, input.c));
        }
        let (c, r) = (self.channels as u64, self.hidden as u64);
        let rows = (input.n * input.h * input.w) as u64;
        let numel = input.numel() as u64;
        let mlp = Cost {
            params: c * r + r + r * c + c,
            macs: 2 * rows * c * r,
            // fc1 bias, relu, fc2 bias, sigmoid, gate multiply
            elementwise: rows * r + rows * r + numel + numel + numel,
        };
        let (mid, a) = conv_cost(&self.conv1, input)?;
        let relu = Cost::ew(mid.numel());
        let (out, b) = conv_cost(&self.conv2, mid)?;
        // sigmoid, gate multiply, residual add
        let tail = Cost::ew(2 * out.numel() + if self.residual { out.numel() } else { 0 });
        Ok((out, mlp + a + relu + b + tail))
    }
}

impl CostModel for Sppf {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        let (a, c1) = self.cv1.cost(input)?;
        let pools = Cost::ew(3 * pool_visits(a, self.pool, self.pool / 2) as usize);
        let (out, c2) = self.cv2.cost(a.with_c(4 * a.c))?;
        Ok((out, c1 + pools + c2))
    }
}

impl CostModel for Block {
    fn cost(&self, input: Shape) -> Result<(Shape, Cost)> {
        match self {
            Block::Conv(b) => b.cost(input),
            Block::Bottleneck(b) => b.cost(input),
            Block::C3(b) => b.cost(input),
            Block::GhostConv(b) => b.cost(input),
            Block::GhostBottleneck(b) => b.cost(input),
            Block::CrossConv(b) => b.cost(input),
            Block::Gam(b) => b.cost(input),
            Block::Sppf(b) => b.cost(input),
            Block::Upsample { .. } => Ok((self.output_shape(input)?, Cost::default())),
            Block::Seq(blocks) => {
                let mut s = input;
                let mut total = Cost::default();
                for b in blocks {
                    let (o, c) = b.cost(s)?;
                    s = o;
                    total += c;
                }
                Ok((s, total))
            }
        }
    }
}

/// Closed-form cost of the detection head over its input feature shapes.
pub fn detect_cost(head: &DetectHead, inputs: &[Shape]) -> Result<(Vec<Shape>, Cost)> {
    let mut shapes = Vec::new();
    let mut total = Cost::default();
    for (spec, &s) in head.convs.iter().zip(inputs) {
        let (o, c) = conv_cost(spec, s)?;
        shapes.push(o);
        total += c;
    }
    Ok((shapes, total))
}

/// Per-layer closed-form costs of a config for a `1 x 3 x h x w` input.
pub fn analyze(config: &ModelConfig, h: usize, w: usize) -> Result<CostReport> {
    if h == 0 || w == 0 {
        return Err(Error::config("input size must be positive"));
    }
    let blocks = config.blocks()?;
    let shapes = config.infer_shapes(h, w)?;
    let image = Shape::new(1, INPUT_CHANNELS, h, w);
    let mut rows = Vec::with_capacity(blocks.len() + 1);
    for (l, b) in config.layers.iter().zip(&blocks) {
        let input = match l.from[0] {
            Source::Image => image,
            Source::Layer(j) => shapes[j],
        };
        let (out, cost) = match b {
            Some(b) => b.cost(input)?,
            None => (shapes[l.index], Cost::default()),
        };
        rows.push(CostRow::new(l.index, l.kind.name(), &l.from, l.repeats, vec![out], cost));
    }
    if let Some(head) = DetectHead::new(config) {
        let inputs: Vec<Shape> = config.detect_from.iter().map(|&j| shapes[j]).collect();
        let (outs, cost) = detect_cost(&head, &inputs)?;
        let from: Vec<Source> = config.detect_from.iter().map(|&j| Source::Layer(j)).collect();
        rows.push(CostRow::new(config.detect_index(), "Detect", &from, 1, outs, cost));
    }
    Ok(CostReport::new(config.name.clone(), (h, w), rows))
}

/// Largest `h * w` the instrumented executor will run.
pub const EMPIRICAL_MAX_PIXELS: usize = 128 * 128;

fn guard(h: usize, w: usize) -> Result<()> {
    if h * w > EMPIRICAL_MAX_PIXELS {
        return Err(Error::Guard(format!(
            "empirical counting runs the naive kernels; {h}x{w} exceeds the {} pixel limit, shrink the input to at most 128x128",
            EMPIRICAL_MAX_PIXELS
        )));
    }
    Ok(())
}

/// MACs and elementwise ops counted while executing one block.
pub fn count_block_empirical(block: &Block, weights: &BlockWeights, input: Shape) -> Result<Cost> {
    guard(input.h, input.w)?;
    let counter = OpCounter::new();
    block.forward(&Exec::counting(&counter), &Tensor::zeros(input), &weights.root())?;
    Ok(Cost {
        params: weights.total_floats() as u64,
        macs: counter.macs(),
        elementwise: counter.elementwise(),
    })
}

/// Run the naive executor with a counter on a seeded model; `params` is the
/// number of floats in the model's weights.
pub fn count_flops_empirical(config: &ModelConfig, h: usize, w: usize) -> Result<Cost> {
    guard(h, w)?;
    let model = build_model(config.clone(), WeightSource::Seeded(0))?;
    let counter = OpCounter::new();
    let x = Tensor::zeros(Shape::new(1, INPUT_CHANNELS, h, w));
    model.forward_with(&Exec::counting(&counter), &x)?;
    Ok(Cost {
        params: model.param_count() as u64,
        macs: counter.macs(),
        elementwise: counter.elementwise(),
    })
}
