//! The differentiable core: exact forward/backward passes for the layer
//! set (linear, tanh, batchnorm, vertex mean-pooling), the assembled MLP,
//! initialization, parameter counting, and checkpointing.

mod checkpoint;
pub mod layers;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, save_checkpoint_bytes, Checkpoint};
pub use layers::Activation;
pub use model::{
    init_model, param_count, BlockParams, ForwardCache, HeadParams, MlpModel, Mode, ModelConfig,
    ParamGrads,
};
