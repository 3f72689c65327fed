//! Minimal differentiable-computation kernel.
//!
//! Dense `f64` tensors, a small op vocabulary ([`Exec`]) that runs either on a
//! recording [`Tape`] (training) or on [`Eager`] values (inference), MLPs with
//! optional group normalization, and an Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod kernels;
pub mod mlp;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use error::{DiffError, Result};
pub use exec::{Eager, Exec};
pub use kernels::{Activation, Index, Reduce};
pub use mlp::{mlp_forward, Linear, MlpParams, MlpShape, NormParams};
pub use params::{ParamId, ParamStore};
pub use tape::{sum_scalars, Gradients, Tape, Var};
pub use tensor::Tensor;
