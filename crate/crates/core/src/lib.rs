//! Multigrid-in-channels (MGIC) convolution blocks.
//!
//! The crate bundles a small dense-tensor library with tape-based reverse
//! differentiation, grouped convolution layers, the MGIC block and its
//! channel-hierarchy transfer operators, an exact parameter / MAC / memory
//! cost model, an SGD training engine and the experiment drivers behind the
//! `mgic` command-line tool.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod cost;
pub mod error;
pub mod kernels;
pub mod mgic;
pub mod models;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Float, Tensor};
