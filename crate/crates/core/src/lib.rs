//! Crossbar MAC block simulation and neural emulation.
//!
//! * [`xbar`]: geometry, input tensor, device parameters, normalization.
//! * [`oracle`]: Newton-Raphson circuit solver producing ground-truth outputs.
//! * [`dataset`]: sampling, labelling, splitting and persisting datasets.
//! * [`net`]: the 3D-convolutional emulator with manual backpropagation and Adam.
//! * [`verify`]: error-bound theory, residual statistics and benchmarks.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod net;
pub mod oracle;
pub mod threads;
pub mod verify;
pub mod xbar;

pub use error::{Error, Result};
