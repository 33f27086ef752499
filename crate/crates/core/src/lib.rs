//! Moment propagation, maximum-entropy reconstruction and filtering for
//! single-mode stochastic hybrid systems with polynomial dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod error;
pub mod filter;
pub mod maxent;
pub mod mcref;
pub mod model;
pub mod polyalg;
pub mod propagate;
pub mod quad;

pub use error::{Error, Result};
