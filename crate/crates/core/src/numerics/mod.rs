//! Dense fp64 tensors, reverse-mode differentiation, Adam, cosine learning-rate
//! annealing and global-norm gradient clipping.

mod dropout;
mod fd;
pub mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use dropout::Dropout;
pub use fd::{finite_diff_grad, relative_error};
pub use ops::{Activation, Elementwise, SparseMatrix};
pub use optim::{adam_step, clip_gradients, cosine_lr, AdamState, CosineSchedule};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;
