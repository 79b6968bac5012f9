//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! walks the record once in reverse and accumulates adjoints. Parameters
//! enter either as dense copies ([`Tape::param`]) or as row lookups into an
//! embedding table ([`Tape::embedding`]), whose gradients come back as
//! sparse rows so untouched rows are never written.

mod check;
mod tape;
mod tensor;

pub use check::{check_gradients, relative_error, GradCheckReport, DEFAULT_STEP, RELATIVE_FLOOR};
pub use tape::{sigmoid, Binary, Gradients, ParamId, SparseGrad, Tape, Unary, Var};
pub use tensor::Tensor;
