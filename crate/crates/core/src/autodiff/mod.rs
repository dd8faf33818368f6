//! Reverse-mode differentiation over a closed set of tensor primitives.

mod gradcheck;
mod params;
mod pattern;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPS};
pub use params::{Param, ParamStore};
pub use pattern::SparsePattern;
pub(crate) use tape::bce_value;
pub use tape::{masked_softmax, Gradients, Tape, Var, PROB_CLAMP};
