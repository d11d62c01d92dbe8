//! Double-precision tensors, a reverse-mode tape over the fixed op set used
//! by the models, Adam, and a finite-difference gradient verifier.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry};
pub use gradcheck::{
    forward_backward, grad_check, GradCheckReport, ParamCheck, MIN_COORDS_PER_PARAM,
    REL_ERROR_FLOOR,
};
pub use params::{BoundParams, Param, ParamKind, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
