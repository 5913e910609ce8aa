//! Reverse-mode differentiable operators, the multi-path network, and the
//! training routine.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod net;
pub mod tensor;
pub mod train;

pub use graph::{Op, OperatorGraph, Param};
pub use net::{batch_images, threshold_predictions, MultiPathNet};
pub use tensor::Tensor;
pub use train::{soft_dice_loss, train, TrainConfig};
