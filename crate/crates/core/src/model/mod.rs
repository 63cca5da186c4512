//! Decoder backbone and episodic classifier head.

mod backbone;
mod config;
mod head;
mod params;

pub use backbone::{
    layer_param, Backbone, ForwardNodes, ForwardOutput, EMBEDDING, LM_HEAD, OUTPUT_NORM,
};
pub use config::ModelConfig;
pub use head::{head_bias, head_weight, HeadSpec, TaskHead};
pub use params::{xavier_uniform, Bound, ParameterStore};
