//! Dense tensors, a reverse-mode tape, the convolutional encoder and its optimizers.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
mod real;
pub mod state;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{BnUpdate, Gradients, Graph, Mode, Var};
pub use layers::{BatchNormLayer, ByolNet, ConvBlock, Encoder, EncoderConfig, LinearLayer, Mlp};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{Bound, ParamKind, ParamSet};
pub use real::{gemm, Real};
pub use state::EncoderState;
pub use tensor::Tensor;
