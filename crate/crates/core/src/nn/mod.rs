//! Fixed-architecture MLPs with analytic gradients, Adam, and tensor
//! checkpoints. Every network in the crate (reward, critics, values,
//! actors) is built from these pieces.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;

pub use adam::{adam_step, Adam};
pub use checkpoint::{Checkpoint, CheckpointError, Tensor, CHECKPOINT_HEADER};
pub use matrix::Matrix;
pub use mlp::{
    finite_diff_check, relative_error, to_storage, Activation, Gradients, Layer, Mlp, Tape,
    GRAD_CHECK_FLOOR,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: expected input of length {expected}, got {actual}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer} takes {actual} inputs but the previous layer emits {expected}")]
    IncompatibleLayers {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error(
        "layer of {inputs}->{outputs} needs {} weights and {outputs} biases, got {weight_len} and {bias_len}",
        inputs * outputs
    )]
    LayerShape {
        inputs: usize,
        outputs: usize,
        weight_len: usize,
        bias_len: usize,
    },
    #[error("network has no layers")]
    Empty,
    #[error("gradient or state shape does not match the parameters")]
    ParamShape,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
}

/// Builds `[input, hidden x layers, output]`.
pub fn layer_sizes(input: usize, hidden: usize, hidden_layers: usize, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(hidden, hidden_layers));
    sizes.push(output);
    sizes
}
