//! Minimal dense network kernel: forward passes, exact input Jacobians,
//! batch backpropagation and first-order optimizers.

mod checkpoint;
mod layer;
mod net;
mod optim;

pub use checkpoint::{Checkpoint, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layer::{sigmoid, softplus, Activation, BatchNorm, DenseLayer, LayerGrads};
pub use net::{DenseNet, Gradients, Mode};
pub use optim::{OptimizerKind, OptimizerState};
