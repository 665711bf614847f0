//! Dense networks, reverse-mode gradients and first-order optimizers.

mod dense;
mod graph;
mod optim;

pub use dense::{Activation, DenseNet, GradTape, LayerSpan, Mlp};
pub use graph::{sigmoid, softmax, softplus, FieldSampler, Gradients, Graph, NodeId, Unary};
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
