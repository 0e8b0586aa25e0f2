//! Small dense classifier: tanh hidden layers, softmax output, manual
//! backpropagation and an Adam optimizer. All arithmetic is `f64`.

mod adam;
mod mlp;
mod params;

pub use adam::{adam_step, AdamConfig, OptimizerState, DEFAULT_LEARNING_RATE};
pub use mlp::{
    argmax, forward, logits, loss_and_grads, one_hot, softmax, BatchItem, GradAccumulator, LossKind, Prediction,
};
pub use params::{Layer, ModelParams};
