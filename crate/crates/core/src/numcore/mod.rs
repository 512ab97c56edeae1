//! Dense numerics: matrices, seeded randomness, parameters with gradient
//! buffers, Adam, Glorot initialization and a finite-difference gradient check.

mod adam;
mod gradcheck;
mod matrix;
mod param;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use matrix::{stable_log_softmax_rows, Matrix};
pub use param::{glorot_init, ParamTensor, Parameterized};
pub use rng::Rng;
