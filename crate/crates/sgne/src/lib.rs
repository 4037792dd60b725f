//! Skip-gram network embedding toolkit: graph ingestion and synthesis,
//! random-walk corpora, sigmoid and sine losses, perturbation-based
//! optimizers, closed-form saturation analysis and downstream evaluation.

// Validation writes `!(x > 0.0)` on purpose: a NaN input must fail the
// check, which `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod optim;
pub mod theory;

pub use error::{Error, Result};
