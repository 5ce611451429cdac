//! RoBERTa-style encoder: configuration, parameters, forward/backward pass,
//! task heads and checkpoints.

mod checkpoint;
mod config;
mod heads;
mod model;
mod params;

pub use checkpoint::{Checkpoint, OptimizerState, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use heads::{HeadCache, HeadConfig, HeadKind, TaskHead};
pub use model::{cross_entropy_sum, Batch, ForwardCache, MlmHeadCache};
pub use params::{
    count_parameters, parameter_manifest, EncoderParams, LayerNorm, LayerParams, Linear, LmHead, Tensor,
};
