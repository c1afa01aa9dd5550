//! Minimal differentiable numeric core shared by both networks.

pub mod checkpoint;
pub mod kernels;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod posenc;
pub mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use layers::{
    BatchNorm1d, Conv1d, Embedding, GatedResidualBlock, GatedStack, Linear, Module, PlainResidualBlock,
    PlainStack, TensorKind,
};
pub use ops::TimeMask;
pub use optim::{schedule_lr, Adam, LrSchedule};
pub use posenc::positional_encoding;
pub use tensor::{no_grad, Shape, Tensor};
