use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use super::config::{concat_shape, ModelConfig, Source, INPUT_CHANNELS};
use super::tlaw::{read_tlaw, write_tlaw};
use crate::blocks::{Block, BlockWeights, Init, ParamEntry};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Exec, Shape, Tensor};

/// Where a model's parameters come from.
#[derive(Clone, Debug)]
pub enum WeightSource {
    Seeded(u64),
    Weights(BlockWeights),
    File(PathBuf),
}

/// Per-scale 1x1 convs with bias emitting raw `anchors * (5 + nc)` maps.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectHead {
    pub convs: Vec<ConvSpec>,
    pub from: Vec<usize>,
}

impl DetectHead {
    pub fn new(cfg: &ModelConfig) -> Option<DetectHead> {
        if cfg.is_headless() {
            return None;
        }
        let convs = cfg
            .detect_from
            .iter()
            .map(|&j| ConvSpec::new(cfg.layers[j].out_channels(), cfg.head_channels(), 1).bias(true))
            .collect();
        Some(DetectHead {
            convs,
            from: cfg.detect_from.clone(),
        })
    }

    pub fn layout(&self, prefix: &str, out: &mut Vec<ParamEntry>) {
        for (j, spec) in self.convs.iter().enumerate() {
            let fan_in = spec.in_channels;
            out.push(ParamEntry {
                path: format!("{prefix}.m.{j}.weight"),
                shape: spec.weight_shape(),
                init: Init::Uniform { fan_in },
            });
            out.push(ParamEntry {
                path: format!("{prefix}.m.{j}.bias"),
                shape: Shape::new(spec.out_channels, 1, 1, 1),
                init: Init::Uniform { fan_in },
            });
        }
    }
}

pub fn layer_prefix(index: usize) -> String {
    format!("model.{index}")
}

/// Every parameter of the model in declaration order.
pub fn model_layout(cfg: &ModelConfig) -> Result<Vec<ParamEntry>> {
    let mut out = Vec::new();
    for (i, b) in cfg.blocks()?.iter().enumerate() {
        if let Some(b) = b {
            b.layout(&layer_prefix(i), &mut out);
        }
    }
    if let Some(head) = DetectHead::new(cfg) {
        head.layout(&layer_prefix(cfg.detect_index()), &mut out);
    }
    Ok(out)
}

/// An executable layer graph with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    blocks: Vec<Option<Block>>,
    head: Option<DetectHead>,
    weights: BlockWeights,
    max_stride: usize,
    /// Index of the last layer reading each layer's output.
    last_use: Vec<usize>,
}

pub fn build_model(config: ModelConfig, source: WeightSource) -> Result<Model> {
    let layout = model_layout(&config)?;
    let weights = match source {
        WeightSource::Seeded(seed) => BlockWeights::seeded(&layout, seed),
        WeightSource::Weights(w) => w,
        WeightSource::File(path) => load_weights(&path)?,
    };
    weights.check_layout(&layout)?;
    let blocks = config.blocks()?;
    let head = DetectHead::new(&config);
    let n = config.layers.len();
    let mut last_use: Vec<usize> = (0..n).collect();
    for l in &config.layers {
        for s in &l.from {
            if let Source::Layer(j) = *s {
                last_use[j] = last_use[j].max(l.index);
            }
        }
    }
    if config.is_headless() {
        last_use[n - 1] = n;
    }
    for &j in &config.detect_from {
        last_use[j] = n;
    }
    let max_stride = config.max_stride()?;
    Ok(Model {
        config,
        blocks,
        head,
        weights,
        max_stride,
        last_use,
    })
}

pub fn load_weights(path: &Path) -> Result<BlockWeights> {
    read_tlaw(BufReader::new(File::open(path)?))
}

pub fn save_weights(weights: &BlockWeights, path: &Path) -> Result<()> {
    write_tlaw(weights, BufWriter::new(File::create(path)?))
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &BlockWeights {
        &self.weights
    }

    pub fn head(&self) -> Option<&DetectHead> {
        self.head.as_ref()
    }

    pub fn max_stride(&self) -> usize {
        self.max_stride
    }

    pub fn param_count(&self) -> usize {
        self.weights.total_floats()
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != INPUT_CHANNELS {
            return Err(Error::shape("forward", "image channels", INPUT_CHANNELS, s.c));
        }
        let m = self.max_stride;
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            return Err(Error::config(format!(
                "input {}x{} must be divisible by the maximum stride {m}",
                s.h, s.w
            )));
        }
        Ok(())
    }

    /// Raw head maps, one per detect scale (or the last layer's output for
    /// headless configs).
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.forward_with(&Exec::fast(), x)
    }

    pub fn forward_with(&self, ctx: &Exec, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x.shape())?;
        let n = self.config.layers.len();
        let mut outs: Vec<Option<Tensor>> = vec![None; n];
        for (i, (l, b)) in self.config.layers.iter().zip(&self.blocks).enumerate() {
            let get = |s: &Source| -> &Tensor {
                match *s {
                    Source::Image => x,
                    Source::Layer(j) => outs[j].as_ref().expect("layer output still live"),
                }
            };
            let y = match b {
                Some(b) => b.forward(ctx, get(&l.from[0]), &self.weights.scope(&layer_prefix(i)))?,
                None => {
                    let parts: Vec<&Tensor> = l.from.iter().map(get).collect();
                    concat_shape(l, parts.iter().map(|t| t.shape()))?;
                    ctx.concat(&parts)?
                }
            };
            outs[i] = Some(y);
            for s in &l.from {
                if let Source::Layer(j) = *s {
                    if self.last_use[j] == i {
                        outs[j] = None;
                    }
                }
            }
        }
        let Some(head) = &self.head else {
            return Ok(vec![outs[n - 1].take().expect("last layer output")]);
        };
        let scope = self.weights.scope(&layer_prefix(n));
        head.convs
            .iter()
            .zip(&head.from)
            .enumerate()
            .map(|(j, (spec, &src))| {
                let feat = outs[src].as_ref().expect("detect input live");
                let w = scope.tensor(&format!("m.{j}.weight"), spec.weight_shape())?;
                let b = scope.vector(&format!("m.{j}.bias"), spec.out_channels)?;
                ctx.conv(feat, spec, w, Some(b))
            })
            .collect()
    }
}
