//! Dense `f64` tensors with a reverse-mode tape, the neural building blocks
//! the navigation agent is made of, Adam, a binary checkpoint container and
//! a finite-difference gradient checker.

mod checkpoint;
mod error;
mod gradcheck;
pub mod layers;
mod memory;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use error::{CheckpointError, GradCheckError, OptimError, TensorError};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use memory::retain_freed_memory;
pub use optim::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
