//! A small dense neural-network engine with manual reverse-mode differentiation.

pub mod gradcheck;
pub mod io;
mod layer;
mod loss;
mod matrix;
mod optim;
pub mod rng;
mod stack;
mod tensor;

pub use layer::{Layer, LayerKind, LayerSpec};
pub use loss::{bce_loss, LossOutput, PROB_EPS};
pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use stack::{Activations, LayerStack, Masks, MlpOptions, Mode};
pub use tensor::ParamTensor;
