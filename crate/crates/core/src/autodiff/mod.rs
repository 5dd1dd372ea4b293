//! Dense tensors and a dynamic reverse-mode differentiation tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheck};
pub use tape::{Tape, Var, ZEROFILL};
pub use tensor::Tensor;
