//! Input-convex neural networks whose output is the optimal value of a
//! second-order cone program.
//!
//! The crate provides the model and its exact forward pass ([`model`]),
//! reverse-mode derivatives ([`grad`]), projected-Adam training and the
//! budget-matched benchmark protocol ([`train`]), LP/SOCP certificates with
//! an independent simplex oracle ([`certificate`]), the benchmark target
//! functions ([`targets`]), downstream decision evaluation ([`decisions`]),
//! executable approximation-theory checks ([`theory`]) and end-to-end
//! experiment drivers ([`experiments`]).

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod decisions;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod targets;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{Activation, Architecture, ForwardTrace, SocIcnnParams};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
