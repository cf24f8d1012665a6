//! Small dense numerical stack: row-major matrices, fully connected networks with
//! hand-written reverse-mode gradients, Adam, and Polyak averaging.
//!
//! Two evaluation paths exist. [`mlp_forward`]/[`mlp_backward`] work on a single
//! vector with plain loops; [`forward_batch`]/[`backward_batch`] run a minibatch
//! through `dgemm` and are what the trainer uses. Both are checked against
//! central finite differences in the tests.

mod adam;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use matrix::Matrix;
pub use mlp::{
    backward_batch, forward_batch, mlp_backward, mlp_forward, soft_update, Activation,
    ForwardTrace, Gradient, Layer, LayerGrad, ParamSet,
};
