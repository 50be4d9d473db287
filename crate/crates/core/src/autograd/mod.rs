//! Tape-based reverse-mode differentiation.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{finite_difference_check, GradCheck};
pub use ops::{ConvGeom, CustomOp, OpKind};
pub use tape::{Gradients, NodeInfo, Tape, Var};
