//! Bayesian ranking and selection with normal-inverse-Wishart beliefs: closed-form
//! single-observation updates, knowledge-gradient sampling, Monte Carlo oracles and an
//! experiment harness.

// `!(x > y)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod error;
pub mod harness;
pub mod kg;
pub mod oracle;
pub mod problems;
pub mod sampling;
pub mod student_t;
pub mod update;
pub mod verify;
