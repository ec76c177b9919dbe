//! Dense-tensor reverse-mode differentiation, Adam, and parameter checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_params, save_params, CheckpointMeta};
pub use gradcheck::{grad_check, Coordinates, GradCheckReport};
pub use params::{GradMap, ParamStore};
pub use tape::{Primitive, Tape, Var};
pub use tensor::Tensor;
