//! Composite network blocks: Conv-BN-SiLU, Bottleneck, C3 and its Ghost and
//! CrossConv variants, GhostConv, GhostBottleneck, CrossConv, GAM, SPPF and
//! the detection head stub.
//!
//! Every block is described by [`BlockParams`] and lowered into a [`Block`],
//! a tree of concrete units. The same tree drives execution, the weight
//! layout (parameter paths and shapes) and shape inference.
//!
//! Parameter paths, relative to a block:
//!
//! | unit        | paths                                              |
//! |-------------|----------------------------------------------------|
//! | ConvBNAct   | `conv.weight`, `bn.scale`, `bn.shift`              |
//! | Bottleneck  | `cv1.*`, `cv2.*` (CrossConv: `cv2.cv1.*`, `cv2.cv2.*`) |
//! | C3 family   | `cv1.*`, `cv2.*`, `cv3.*`, `m.{i}.*`                |
//! | GhostConv   | `cv1.*` (primary), `cv2.*` (depthwise 5x5)         |
//! | GhostBottleneck | `conv.0.*`, `conv.1.*` (stride 2), `conv.2.*`, `shortcut.0.*`, `shortcut.1.*` |
//! | GAM         | `channel.fc1.{weight,bias}`, `channel.fc2.*`, `spatial.conv1.{weight,bias}`, `spatial.conv2.*` |
//! | SPPF        | `cv1.*`, `cv2.*`                                   |
//! | Detect      | `m.{i}.weight`, `m.{i}.bias`                       |
//! | repeated non-C3 layer | `{i}.*` per copy                         |

mod c3;
mod gam;
mod sppf;
mod units;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Exec, Shape, Tensor};

pub use c3::{C3Block, C3Inner};
pub use gam::Gam;
pub use sppf::Sppf;
pub use units::{Bottleneck, BottleneckMid, ConvBnAct, CrossConv, GhostBottleneck, GhostConv};
pub use weights::{BlockWeights, Init, ParamEntry, Scope};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    ConvBNAct,
    Bottleneck,
    C3,
    GhostConv,
    GhostBottleneck,
    C3Ghost,
    CrossConv,
    C3CrossConv,
    GAM,
    SPPF,
    Upsample,
    Concat,
    Detect,
}

impl BlockKind {
    pub const ALL: [BlockKind; 13] = [
        BlockKind::ConvBNAct,
        BlockKind::Bottleneck,
        BlockKind::C3,
        BlockKind::GhostConv,
        BlockKind::GhostBottleneck,
        BlockKind::C3Ghost,
        BlockKind::CrossConv,
        BlockKind::C3CrossConv,
        BlockKind::GAM,
        BlockKind::SPPF,
        BlockKind::Upsample,
        BlockKind::Concat,
        BlockKind::Detect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::ConvBNAct => "Conv",
            BlockKind::Bottleneck => "Bottleneck",
            BlockKind::C3 => "C3",
            BlockKind::GhostConv => "GhostConv",
            BlockKind::GhostBottleneck => "GhostBottleneck",
            BlockKind::C3Ghost => "C3Ghost",
            BlockKind::CrossConv => "CrossConv",
            BlockKind::C3CrossConv => "C3CrossConv",
            BlockKind::GAM => "GAM",
            BlockKind::SPPF => "SPPF",
            BlockKind::Upsample => "Upsample",
            BlockKind::Concat => "Concat",
            BlockKind::Detect => "Detect",
        }
    }

    /// C3-family blocks take the layer repeat count as their bottleneck depth;
    /// any other kind is stacked `repeats` times.
    pub fn absorbs_repeats(self) -> bool {
        matches!(self, BlockKind::C3 | BlockKind::C3Ghost | BlockKind::C3CrossConv)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "Conv" | "ConvBNAct" => BlockKind::ConvBNAct,
            "C3CrossConv" | "C3x" => BlockKind::C3CrossConv,
            "GAM" | "GAM_Attention" => BlockKind::GAM,
            "Upsample" | "nn.Upsample" => BlockKind::Upsample,
            other => *BlockKind::ALL
                .iter()
                .find(|k| k.name() == other)
                .ok_or_else(|| Error::config(format!("unknown block kind `{other}`")))?,
        };
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Silu,
    Relu,
    Identity,
}

/// Everything needed to instantiate one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Bottleneck depth for C3-family blocks; stacked copies otherwise.
    pub repeats: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Explicit padding; `None` means `kernel / 2`.
    pub padding: Option<usize>,
    /// Hidden width ratio of C3-family blocks.
    pub expansion: f64,
    pub shortcut: bool,
    pub gam_ratio: usize,
    /// Groups of the GAM spatial convolutions.
    pub gam_groups: usize,
    pub gam_residual: bool,
    pub activation: Activation,
    /// Upsample factor.
    pub factor: usize,
}

impl BlockParams {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize) -> Self {
        BlockParams {
            kind,
            in_channels,
            out_channels,
            repeats: 1,
            kernel: 1,
            stride: 1,
            padding: None,
            expansion: 0.5,
            shortcut: true,
            gam_ratio: 4,
            gam_groups: 4,
            gam_residual: true,
            activation: Activation::Silu,
            factor: 2,
        }
    }

    pub fn conv(cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        BlockParams {
            kernel,
            stride,
            ..Self::new(BlockKind::ConvBNAct, cin, cout)
        }
    }

    pub fn bottleneck(cin: usize, cout: usize, shortcut: bool) -> Self {
        BlockParams {
            shortcut,
            ..Self::new(BlockKind::Bottleneck, cin, cout)
        }
    }

    pub fn c3(kind: BlockKind, cin: usize, cout: usize, repeats: usize, shortcut: bool) -> Self {
        BlockParams {
            repeats,
            shortcut,
            ..Self::new(kind, cin, cout)
        }
    }

    pub fn ghost_conv(cin: usize, cout: usize) -> Self {
        Self::new(BlockKind::GhostConv, cin, cout)
    }

    pub fn ghost_bottleneck(cin: usize, cout: usize, stride: usize) -> Self {
        BlockParams {
            kernel: 3,
            stride,
            ..Self::new(BlockKind::GhostBottleneck, cin, cout)
        }
    }

    pub fn cross_conv(cin: usize, cout: usize, kernel: usize, stride: usize, shortcut: bool) -> Self {
        BlockParams {
            kernel,
            stride,
            shortcut,
            ..Self::new(BlockKind::CrossConv, cin, cout)
        }
    }

    pub fn gam(channels: usize, ratio: usize, residual: bool) -> Self {
        BlockParams {
            gam_ratio: ratio,
            gam_groups: ratio,
            gam_residual: residual,
            ..Self::new(BlockKind::GAM, channels, channels)
        }
    }

    pub fn sppf(cin: usize, cout: usize, kernel: usize) -> Self {
        BlockParams {
            kernel,
            ..Self::new(BlockKind::SPPF, cin, cout)
        }
    }

    pub fn upsample(channels: usize, factor: usize) -> Self {
        BlockParams {
            factor,
            ..Self::new(BlockKind::Upsample, channels, channels)
        }
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.repeats == 0 {
            return Err(Error::config(format!("{kind}: repeats must be >= 1")));
        }
        if !(self.expansion > 0.0 && self.expansion <= 1.0) {
            return Err(Error::config(format!(
                "{kind}: expansion {} outside (0, 1]",
                self.expansion
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config(format!("{kind}: channel counts must be >= 1")));
        }
        if kind == BlockKind::GAM {
            if self.gam_ratio == 0 || !self.in_channels.is_multiple_of(self.gam_ratio) {
                return Err(Error::config(format!(
                    "GAM ratio {} does not divide {} channels",
                    self.gam_ratio, self.in_channels
                )));
            }
            let hidden = self.in_channels / self.gam_ratio;
            if self.gam_groups == 0 || !hidden.is_multiple_of(self.gam_groups) {
                return Err(Error::config(format!(
                    "GAM groups {} do not divide hidden width {hidden}",
                    self.gam_groups
                )));
            }
        }
        Ok(())
    }

    fn c3_hidden(&self) -> usize {
        (self.out_channels as f64 * self.expansion) as usize
    }
}

/// A block lowered into concrete units.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Block {
    Conv(ConvBnAct),
    Bottleneck(Bottleneck),
    C3(C3Block),
    GhostConv(GhostConv),
    GhostBottleneck(GhostBottleneck),
    CrossConv(CrossConv),
    Gam(Gam),
    Sppf(Sppf),
    Upsample { channels: usize, factor: usize },
    /// `repeats` stacked copies of a non-C3 block.
    Seq(Vec<Block>),
}

impl Block {
    /// Lower single-input block parameters. Concat and Detect take several
    /// inputs and are assembled by the model graph instead.
    pub fn from_params(p: &BlockParams) -> Result<Block> {
        p.validate()?;
        if p.repeats > 1 && !p.kind.absorbs_repeats() {
            let mut copies = Vec::with_capacity(p.repeats);
            for i in 0..p.repeats {
                let cin = if i == 0 { p.in_channels } else { p.out_channels };
                copies.push(Block::from_params(&BlockParams {
                    repeats: 1,
                    in_channels: cin,
                    ..p.clone()
                })?);
            }
            return Ok(Block::Seq(copies));
        }
        let block = match p.kind {
            BlockKind::ConvBNAct => {
                let spec = ConvSpec::new(p.in_channels, p.out_channels, p.kernel)
                    .stride(p.stride)
                    .pad(p.padding.unwrap_or(p.kernel / 2));
                Block::Conv(ConvBnAct::new(spec, p.activation)?)
            }
            BlockKind::Bottleneck => Block::Bottleneck(Bottleneck::standard(
                p.in_channels,
                p.out_channels,
                p.shortcut,
                p.activation,
            )?),
            BlockKind::C3 | BlockKind::C3Ghost | BlockKind::C3CrossConv => {
                Block::C3(C3Block::new(p, p.c3_hidden())?)
            }
            BlockKind::GhostConv => Block::GhostConv(GhostConv::new(
                p.in_channels,
                p.out_channels,
                p.kernel,
                p.stride,
                p.activation,
            )?),
            BlockKind::GhostBottleneck => Block::GhostBottleneck(GhostBottleneck::new(
                p.in_channels,
                p.out_channels,
                p.kernel,
                p.stride,
                p.activation,
            )?),
            BlockKind::CrossConv => Block::CrossConv(CrossConv::new(
                p.in_channels,
                p.out_channels,
                p.kernel,
                p.stride,
                p.shortcut,
                p.activation,
            )?),
            BlockKind::GAM => Block::Gam(Gam::new(p)?),
            BlockKind::SPPF => Block::Sppf(Sppf::new(p.in_channels, p.out_channels, p.kernel, p.activation)?),
            BlockKind::Upsample => {
                if p.factor == 0 {
                    return Err(Error::config("upsample factor must be >= 1"));
                }
                Block::Upsample {
                    channels: p.in_channels,
                    factor: p.factor,
                }
            }
            BlockKind::Concat | BlockKind::Detect => {
                return Err(Error::config(format!(
                    "{} is a multi-input layer, not a standalone block",
                    p.kind
                )))
            }
        };
        Ok(block)
    }

    pub fn forward(&self, ctx: &Exec, x: &Tensor, w: &Scope) -> Result<Tensor> {
        match self {
            Block::Conv(b) => b.forward(ctx, x, w),
            Block::Bottleneck(b) => b.forward(ctx, x, w),
            Block::C3(b) => b.forward(ctx, x, w),
            Block::GhostConv(b) => b.forward(ctx, x, w),
            Block::GhostBottleneck(b) => b.forward(ctx, x, w),
            Block::CrossConv(b) => b.forward(ctx, x, w),
            Block::Gam(b) => b.forward(ctx, x, w),
            Block::Sppf(b) => b.forward(ctx, x, w),
            Block::Upsample { channels, factor } => {
                check_channels("Upsample", *channels, x.shape())?;
                ctx.upsample(x, *factor)
            }
            Block::Seq(blocks) => {
                let mut y = blocks[0].forward(ctx, x, &w.sub("0"))?;
                for (i, b) in blocks.iter().enumerate().skip(1) {
                    y = b.forward(ctx, &y, &w.sub(&i.to_string()))?;
                }
                Ok(y)
            }
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Block::Conv(b) => b.output_shape(input),
            Block::Bottleneck(b) => b.output_shape(input),
            Block::C3(b) => b.output_shape(input),
            Block::GhostConv(b) => b.output_shape(input),
            Block::GhostBottleneck(b) => b.output_shape(input),
            Block::CrossConv(b) => b.output_shape(input),
            Block::Gam(b) => b.output_shape(input),
            Block::Sppf(b) => b.output_shape(input),
            Block::Upsample { channels, factor } => {
                check_channels("Upsample", *channels, input)?;
                Ok(Shape::new(input.n, input.c, input.h * factor, input.w * factor))
            }
            Block::Seq(blocks) => blocks.iter().try_fold(input, |s, b| b.output_shape(s)),
        }
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        match self {
            Block::Conv(b) => b.layout(prefix, out),
            Block::Bottleneck(b) => b.layout(prefix, out),
            Block::C3(b) => b.layout(prefix, out),
            Block::GhostConv(b) => b.layout(prefix, out),
            Block::GhostBottleneck(b) => b.layout(prefix, out),
            Block::CrossConv(b) => b.layout(prefix, out),
            Block::Gam(b) => b.layout(prefix, out),
            Block::Sppf(b) => b.layout(prefix, out),
            Block::Upsample { .. } => {}
            Block::Seq(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    b.layout(&weights::join(prefix, &i.to_string()), out);
                }
            }
        }
    }

    /// Parameter entries with paths relative to this block.
    pub fn param_entries(&self) -> Vec<ParamEntry> {
        let mut out = Vec::new();
        self.layout("", &mut out);
        out
    }
}

pub(crate) fn check_channels(op: &'static str, expected: usize, input: Shape) -> Result<()> {
    if input.c != expected {
        return Err(Error::shape(op, "input channels", expected, input.c));
    }
    Ok(())
}

fn run_kind(
    expected: &[BlockKind],
    x: &Tensor,
    params: &BlockParams,
    weights: &BlockWeights,
) -> Result<Tensor> {
    if !expected.contains(&params.kind) {
        return Err(Error::config(format!(
            "expected a {} block, got {}",
            expected[0], params.kind
        )));
    }
    Block::from_params(params)?.forward(&Exec::fast(), x, &weights.root())
}

/// C3 block: two 1x1 branches, bottleneck stack on the first, concat, 1x1 fuse.
pub fn forward_c3(x: &Tensor, params: &BlockParams, weights: &BlockWeights) -> Result<Tensor> {
    run_kind(&[BlockKind::C3], x, params, weights)
}

pub fn forward_c3_ghost(x: &Tensor, params: &BlockParams, weights: &BlockWeights) -> Result<Tensor> {
    run_kind(&[BlockKind::C3Ghost], x, params, weights)
}

pub fn forward_c3_crossconv(
    x: &Tensor,
    params: &BlockParams,
    weights: &BlockWeights,
) -> Result<Tensor> {
    run_kind(&[BlockKind::C3CrossConv], x, params, weights)
}

pub fn forward_ghost_conv(x: &Tensor, params: &BlockParams, weights: &BlockWeights) -> Result<Tensor> {
    run_kind(&[BlockKind::GhostConv], x, params, weights)
}

pub fn forward_ghost_bottleneck(
    x: &Tensor,
    params: &BlockParams,
    weights: &BlockWeights,
) -> Result<Tensor> {
    run_kind(&[BlockKind::GhostBottleneck], x, params, weights)
}

pub fn forward_cross_conv(x: &Tensor, params: &BlockParams, weights: &BlockWeights) -> Result<Tensor> {
    run_kind(&[BlockKind::CrossConv], x, params, weights)
}

pub fn forward_gam(x: &Tensor, params: &BlockParams, weights: &BlockWeights) -> Result<Tensor> {
    run_kind(&[BlockKind::GAM], x, params, weights)
}

pub fn forward_sppf(x: &Tensor, params: &BlockParams, weights: &BlockWeights) -> Result<Tensor> {
    run_kind(&[BlockKind::SPPF], x, params, weights)
}

/// Any single-input block.
pub fn forward_block(x: &Tensor, params: &BlockParams, weights: &BlockWeights) -> Result<Tensor> {
    Block::from_params(params)?.forward(&Exec::fast(), x, &weights.root())
}
