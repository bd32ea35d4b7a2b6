//! Uncertainty-aware multi-view classification.
//!
//! Each view gets its own evidential classifier whose softplus head yields a
//! Dirichlet over classes. Views are fused with Dempster's rule, and a staged
//! policy only consults extra views when the current opinion is too
//! uncertain.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod decision;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod numfmt;
pub mod opinion;
pub mod pipeline;

pub use error::{Error, Result};
