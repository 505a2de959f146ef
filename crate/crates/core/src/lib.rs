//! Layer-graph detector engine: tensors and kernels, network blocks, model
//! assembly, cost analysis, anchor fitting, post-processing, evaluation and
//! dataset I/O.

pub mod anchors;
pub mod blocks;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod postprocess;
pub mod selfcheck;
pub mod tensor;

pub use anchors::{AnchorSet, Wh};
pub use blocks::{Activation, Block, BlockKind, BlockParams, BlockWeights};
pub use cost::{analyze, Cost, CostReport};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use model::{build_model, Model, ModelConfig, WeightSource};
pub use postprocess::{BBox, Detection};
pub use tensor::{ConvSpec, Exec, OpCounter, Shape, Tensor};
