//! Dense tensors, reverse-mode differentiation, and Adam.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_diff_check, relative_error, CoordCheck, FdReport, REL_ERROR_FLOOR};
pub use params::{ParamId, ParamStore, Session};
pub use tape::{gelu, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
