use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blocks::{Activation, Block, BlockKind, BlockParams};
use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Input of a layer: the network image or an earlier layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Image,
    Layer(usize),
}

/// One resolved layer. `repeats` already has depth scaling applied and
/// `params` carries width-scaled channel counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSpec {
    pub index: usize,
    pub from: Vec<Source>,
    pub repeats: usize,
    pub kind: BlockKind,
    pub args: Vec<Value>,
    pub params: BlockParams,
}

impl LayerSpec {
    pub fn out_channels(&self) -> usize {
        self.params.out_channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub name: String,
    pub description: Option<String>,
    pub nc: usize,
    pub depth_multiple: f64,
    pub width_multiple: f64,
    /// Per detect scale, three `(w, h)` anchors in input pixels.
    pub anchors: Vec<Vec<[f32; 2]>>,
    pub layers: Vec<LayerSpec>,
    /// Feature layers fed to the detection head, shallowest first. Empty
    /// only for headless configs produced by [`ModelConfig::truncated`].
    pub detect_from: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    #[serde(default)]
    description: Option<String>,
    nc: usize,
    depth_multiple: f64,
    width_multiple: f64,
    anchors: Vec<Vec<[f32; 2]>>,
    layers: Vec<(Value, usize, String, Vec<Value>)>,
    detect_from: Vec<usize>,
}

pub const ANCHORS_PER_SCALE: usize = 3;
pub const INPUT_CHANNELS: usize = 3;

/// `ceil(c * w / 8) * 8`.
pub fn scale_width(channels: usize, width_multiple: f64) -> usize {
    (channels as f64 * width_multiple / 8.0).ceil() as usize * 8
}

/// `max(1, round(n * d))`.
pub fn scale_depth(repeats: usize, depth_multiple: f64) -> usize {
    ((repeats as f64 * depth_multiple).round() as usize).max(1)
}

fn ctx(i: usize, field: &str) -> String {
    format!("layers[{i}].{field}")
}

fn arg_usize(args: &[Value], pos: usize, default: Option<usize>, i: usize) -> Result<usize> {
    match args.get(pos) {
        None | Some(Value::Null) => {
            default.ok_or_else(|| Error::parse(ctx(i, &format!("args[{pos}]")), "missing required integer"))
        }
        Some(v) => v
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| Error::parse(ctx(i, &format!("args[{pos}]")), format!("expected a non-negative integer, got {v}"))),
    }
}

fn arg_bool(args: &[Value], pos: usize, default: bool, i: usize) -> Result<bool> {
    match args.get(pos) {
        None | Some(Value::Null) => Ok(default),
        Some(Value::Bool(b)) => Ok(*b),
        Some(v) => Err(Error::parse(ctx(i, &format!("args[{pos}]")), format!("expected a boolean, got {v}"))),
    }
}

fn parse_from(v: &Value, i: usize) -> Result<Vec<Source>> {
    let raw: Vec<i64> = match v {
        Value::Number(n) => vec![n
            .as_i64()
            .ok_or_else(|| Error::parse(ctx(i, "from"), "expected an integer"))?],
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_i64().ok_or_else(|| Error::parse(ctx(i, "from"), format!("expected an integer, got {x}"))))
            .collect::<Result<_>>()?,
        other => return Err(Error::parse(ctx(i, "from"), format!("expected an integer or list, got {other}"))),
    };
    if raw.is_empty() {
        return Err(Error::parse(ctx(i, "from"), "empty input list"));
    }
    raw.into_iter()
        .map(|f| {
            let abs = if f < 0 { i as i64 + f } else { f };
            if abs == -1 {
                Ok(Source::Image)
            } else if abs < 0 || abs >= i as i64 {
                Err(Error::parse(
                    ctx(i, "from"),
                    format!("dangling reference {f}: must name an earlier layer"),
                ))
            } else {
                Ok(Source::Layer(abs as usize))
            }
        })
        .collect()
}

fn channels_of(src: Source, layers: &[LayerSpec]) -> usize {
    match src {
        Source::Image => INPUT_CHANNELS,
        Source::Layer(j) => layers[j].out_channels(),
    }
}

fn resolve_params(
    kind: BlockKind,
    args: &[Value],
    cin: usize,
    repeats: usize,
    raw: &RawConfig,
    i: usize,
) -> Result<BlockParams> {
    let width = |c: usize| scale_width(c, raw.width_multiple);
    let mut p = match kind {
        BlockKind::ConvBNAct => {
            let mut p = BlockParams::conv(
                cin,
                width(arg_usize(args, 0, None, i)?),
                arg_usize(args, 1, Some(1), i)?,
                arg_usize(args, 2, Some(1), i)?,
            );
            if let Some(v) = args.get(3).filter(|v| !v.is_null()) {
                p.padding = Some(arg_usize(std::slice::from_ref(v), 0, None, i)?);
            }
            p
        }
        BlockKind::C3 | BlockKind::C3Ghost | BlockKind::C3CrossConv => BlockParams::c3(
            kind,
            cin,
            width(arg_usize(args, 0, None, i)?),
            repeats,
            arg_bool(args, 1, true, i)?,
        ),
        BlockKind::Bottleneck => {
            BlockParams::bottleneck(cin, width(arg_usize(args, 0, None, i)?), arg_bool(args, 1, true, i)?)
        }
        BlockKind::GhostConv => BlockParams {
            kernel: arg_usize(args, 1, Some(1), i)?,
            stride: arg_usize(args, 2, Some(1), i)?,
            ..BlockParams::ghost_conv(cin, width(arg_usize(args, 0, None, i)?))
        },
        BlockKind::GhostBottleneck => BlockParams {
            kernel: arg_usize(args, 1, Some(3), i)?,
            ..BlockParams::ghost_bottleneck(
                cin,
                width(arg_usize(args, 0, None, i)?),
                arg_usize(args, 2, Some(1), i)?,
            )
        },
        BlockKind::CrossConv => BlockParams::cross_conv(
            cin,
            width(arg_usize(args, 0, None, i)?),
            arg_usize(args, 1, Some(3), i)?,
            arg_usize(args, 2, Some(1), i)?,
            arg_bool(args, 3, false, i)?,
        ),
        BlockKind::GAM => {
            let r = arg_usize(args, 0, Some(4), i)?;
            BlockParams {
                gam_groups: arg_usize(args, 1, Some(r), i)?,
                ..BlockParams::gam(cin, r, arg_bool(args, 2, true, i)?)
            }
        }
        BlockKind::SPPF => {
            BlockParams::sppf(cin, width(arg_usize(args, 0, None, i)?), arg_usize(args, 1, Some(5), i)?)
        }
        BlockKind::Upsample => BlockParams::upsample(cin, arg_usize(args, 0, Some(2), i)?),
        BlockKind::Concat | BlockKind::Detect => unreachable!("handled by caller"),
    };
    if !kind.absorbs_repeats() {
        p.repeats = repeats;
    }
    p.activation = Activation::Silu;
    p.validate().map_err(|e| Error::parse(ctx(i, "args"), e.to_string()))?;
    Ok(p)
}

/// Parse and validate a JSON model document.
pub fn parse_config(document: &str) -> Result<ModelConfig> {
    let raw: RawConfig = serde_json::from_str(document).map_err(|e| {
        Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    if !(raw.depth_multiple > 0.0 && raw.width_multiple > 0.0) {
        return Err(Error::parse("depth_multiple/width_multiple", "multiples must be positive"));
    }
    if raw.nc == 0 {
        return Err(Error::parse("nc", "class count must be >= 1"));
    }
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(raw.layers.len());
    for (i, (from, n, kind, args)) in raw.layers.iter().enumerate() {
        let kind: BlockKind = kind
            .parse()
            .map_err(|e: Error| Error::parse(ctx(i, "kind"), e.to_string()))?;
        let from = parse_from(from, i)?;
        if *n == 0 {
            return Err(Error::parse(ctx(i, "repeats"), "repeats must be >= 1"));
        }
        let repeats = scale_depth(*n, raw.depth_multiple);
        let params = match kind {
            BlockKind::Detect => {
                return Err(Error::parse(
                    ctx(i, "kind"),
                    "the detection head is implicit; list its inputs in `detect_from`",
                ))
            }
            BlockKind::Concat => {
                let chans: Vec<usize> = from.iter().map(|&s| channels_of(s, &layers)).collect();
                if from.len() < 2 {
                    return Err(Error::parse(ctx(i, "from"), "Concat needs at least two inputs"));
                }
                if chans.iter().any(|&c| c != chans[0]) {
                    return Err(Error::parse(
                        ctx(i, "from"),
                        format!("fused features must match in channels, got {chans:?}"),
                    ));
                }
                let total = chans.iter().sum();
                BlockParams::new(BlockKind::Concat, total, total)
            }
            _ => {
                if from.len() != 1 {
                    return Err(Error::parse(ctx(i, "from"), format!("{kind} takes exactly one input")));
                }
                resolve_params(kind, args, channels_of(from[0], &layers), repeats, &raw, i)?
            }
        };
        layers.push(LayerSpec {
            index: i,
            from,
            repeats,
            kind,
            args: args.clone(),
            params,
        });
    }
    if layers.is_empty() {
        return Err(Error::parse("layers", "no layers"));
    }
    let scales = raw.detect_from.len();
    if !(3..=4).contains(&scales) {
        return Err(Error::parse("detect_from", format!("expected 3 or 4 scales, got {scales}")));
    }
    if let Some(&bad) = raw.detect_from.iter().find(|&&j| j >= layers.len()) {
        return Err(Error::parse("detect_from", format!("dangling reference {bad}")));
    }
    if raw.anchors.len() != scales {
        return Err(Error::parse(
            "anchors",
            format!("{} anchor groups for {scales} detect scales", raw.anchors.len()),
        ));
    }
    for (s, group) in raw.anchors.iter().enumerate() {
        if group.len() != ANCHORS_PER_SCALE {
            return Err(Error::parse(format!("anchors[{s}]"), format!("expected 3 anchors, got {}", group.len())));
        }
        if group.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::parse(format!("anchors[{s}]"), "anchor sides must be positive"));
        }
    }
    let cfg = ModelConfig {
        name: raw.name.clone(),
        description: raw.description.clone(),
        nc: raw.nc,
        depth_multiple: raw.depth_multiple,
        width_multiple: raw.width_multiple,
        anchors: raw.anchors.clone(),
        layers,
        detect_from: raw.detect_from.clone(),
    };
    cfg.infer_shapes(640, 640)
        .map_err(|e| Error::parse("layers", format!("shape check at 640x640 failed: {e}")))?;
    Ok(cfg)
}

impl ModelConfig {
    pub fn scale_count(&self) -> usize {
        self.detect_from.len()
    }

    /// Channels per head map: `anchors * (5 + nc)`.
    pub fn head_channels(&self) -> usize {
        ANCHORS_PER_SCALE * (5 + self.nc)
    }

    /// Index of the implicit Detect pseudo-layer.
    pub fn detect_index(&self) -> usize {
        self.layers.len()
    }

    pub fn is_headless(&self) -> bool {
        self.detect_from.is_empty()
    }

    /// The first `n` layers with no detection head; the model output is the
    /// last kept layer.
    pub fn truncated(&self, n: usize) -> Result<ModelConfig> {
        if n == 0 || n > self.layers.len() {
            return Err(Error::config(format!(
                "cannot truncate {} layers to {n}",
                self.layers.len()
            )));
        }
        Ok(ModelConfig {
            name: format!("{}[:{n}]", self.name),
            layers: self.layers[..n].to_vec(),
            detect_from: Vec::new(),
            anchors: Vec::new(),
            ..self.clone()
        })
    }

    /// Lowered blocks, `None` for Concat layers.
    pub fn blocks(&self) -> Result<Vec<Option<Block>>> {
        self.layers
            .iter()
            .map(|l| match l.kind {
                BlockKind::Concat => Ok(None),
                _ => Block::from_params(&l.params).map(Some),
            })
            .collect()
    }

    /// Output shape of every layer for a `1 x 3 x h x w` input.
    pub fn infer_shapes(&self, h: usize, w: usize) -> Result<Vec<Shape>> {
        let blocks = self.blocks()?;
        let image = Shape::new(1, INPUT_CHANNELS, h, w);
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        for (l, b) in self.layers.iter().zip(&blocks) {
            let get = |s: Source| match s {
                Source::Image => image,
                Source::Layer(j) => shapes[j],
            };
            let out = match b {
                Some(b) => b.output_shape(get(l.from[0]))?,
                None => concat_shape(l, l.from.iter().map(|&s| get(s)))?,
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    /// Head map shapes for a `1 x 3 x h x w` input.
    pub fn head_shapes(&self, h: usize, w: usize) -> Result<Vec<Shape>> {
        let shapes = self.infer_shapes(h, w)?;
        if self.is_headless() {
            return Ok(vec![*shapes.last().expect("non-empty")]);
        }
        Ok(self
            .detect_from
            .iter()
            .map(|&j| shapes[j].with_c(self.head_channels()))
            .collect())
    }

    /// Largest downsampling factor of any layer.
    pub fn max_stride(&self) -> Result<usize> {
        const PROBE: usize = 1024;
        let shapes = self.infer_shapes(PROBE, PROBE)?;
        Ok(shapes.iter().map(|s| PROBE / s.h.max(1)).max().unwrap_or(1).max(1))
    }

    /// Stride of each detect scale.
    pub fn strides(&self) -> Result<Vec<usize>> {
        const PROBE: usize = 1024;
        let shapes = self.infer_shapes(PROBE, PROBE)?;
        Ok(self.detect_from.iter().map(|&j| PROBE / shapes[j].h).collect())
    }
}

pub(crate) fn concat_shape(l: &LayerSpec, mut inputs: impl Iterator<Item = Shape>) -> Result<Shape> {
    let first = inputs.next().expect("concat has inputs");
    let mut c = first.c;
    for s in inputs {
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(
                "Concat",
                format!("layer {} spatial size", l.index),
                first.h * first.w,
                s.h * s.w,
            ));
        }
        c += s.c;
    }
    Ok(first.with_c(c))
}
