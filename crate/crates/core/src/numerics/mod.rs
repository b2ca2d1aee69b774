//! Dense f64 arrays plus a reverse-mode gradient tape and a
//! finite-difference checker for everything trained in this crate.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
