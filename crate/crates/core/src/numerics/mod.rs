//! Tensors, reverse-mode differentiation, layers, losses and the optimizer.

pub mod adam;
pub mod container;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod params;
pub mod real;
pub mod segments;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use container::Container;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{sigmoid, Backward, Graph, Var};
pub use layers::{Conv1d, Embedding, FrameDecoder, Linear, ResidualGlu};
pub use losses::{bce_elementwise, lr_linear_decay, mse_loss};
pub use params::{Gradients, ParamId, ParamStore};
pub use real::Real;
pub use segments::Segments;
pub use tensor::Tensor;
