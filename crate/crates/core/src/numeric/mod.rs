//! Dense matrices, parameter storage, reverse-mode gradients and Adam.

mod adam;
mod gradcheck;
mod init;
pub(crate) mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, AdamState, DEFAULT_LEARNING_RATE};
pub use gradcheck::{finite_difference_grad, max_relative_errors, Gradients, DEFAULT_EPSILON};
pub use init::init_params;
pub use matrix::{stable_sigmoid, Matrix};
pub use params::ParamStore;
pub use tape::{Segments, Tape, Var};

/// Probability clamp used before taking logs in the cross-entropy loss.
pub const PROB_CLAMP: f64 = 1e-12;
