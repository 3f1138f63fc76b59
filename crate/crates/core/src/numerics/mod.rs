//! Dense matrices, the feedforward network with backprop, losses, optimizers,
//! a linear solver, and a finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod mlp;
mod optim;
mod solve;

pub use gradcheck::{finite_diff_check, DEFAULT_FD_STEP};
pub use matrix::{argmax, Matrix};
pub use mlp::{cross_entropy, softmax, Activation, ForwardTrace, MlpModel, ModelGrads, EPS_LOG};
pub use optim::{OptimizerHyper, OptimizerKind, OptimizerState};
pub use solve::{solve_linear, CONDITION_LIMIT};
