//! Declarative model configs, layer-graph assembly, full forward passes and
//! the `.tlaw` weight format.

mod bundled;
mod config;
mod graph;
mod tlaw;
#[cfg(test)]
mod tests;

pub use bundled::{bundled_config, bundled_names, load_config, BUNDLED};
pub use config::{
    parse_config, scale_depth, scale_width, LayerSpec, ModelConfig, Source, ANCHORS_PER_SCALE,
    INPUT_CHANNELS,
};
pub use graph::{
    build_model, layer_prefix, load_weights, model_layout, save_weights, DetectHead, Model,
    WeightSource,
};
pub use tlaw::{read_tlaw, write_tlaw, TLAW_MAGIC, TLAW_VERSION};
