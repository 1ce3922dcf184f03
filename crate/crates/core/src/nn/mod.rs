//! Minimal differentiable tensor layer: dense matrices, a recording tape
//! with reverse-mode gradients, the layer blocks used by the models, Adam,
//! and the binary checkpoint format.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod params;
mod tensor;

pub use graph::{Graph, Var, MASK_SENTINEL, MASK_THRESHOLD};
pub use layers::{
    scaled_dot_attention, BatchNorm, EncoderLayer, FeedForward, GruCell, Linear, MultiHeadAttention,
};
pub use params::{adam_update, AdamConfig, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
