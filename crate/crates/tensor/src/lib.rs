//! Numeric substrate for the instruction generator: dense `f64` tensors, a
//! per-example reverse-mode tape, the loss and sampling primitives used in
//! training, and Adam.

pub mod adam;
pub mod error;
pub mod fd;
pub mod functional;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use fd::{finite_difference_gradient, max_relative_error};
pub use functional::{
    adversarial_generator_loss, binary_cross_entropy, clamp_prob, cross_entropy_loss,
    discriminator_loss, gumbel_softmax, log_sum_exp, sigmoid, softmax, CrossEntropy, PROB_EPS,
};
pub use graph::{Gradients, Graph, ParamKey, Var};
pub use rng::{Stream, GUMBEL_UNIFORM_EPS};
pub use tensor::{argmax, Tensor};
