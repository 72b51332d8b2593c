//! Dense reverse-mode differentiation and the Adam optimizer.
//!
//! A [`Tape`] is rebuilt for every training step: parameters are recorded as
//! leaves, the forward pass appends operations, and [`Tape::backward`] sweeps
//! the record once in reverse.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{center_rows, Gradients, SparseMix, Tape, Var};
pub use tensor::Tensor;
