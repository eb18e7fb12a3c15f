//! Active knowledge distillation simulator.
//!
//! Runs round-based active learning where a student is distilled from a
//! teacher whose predictions cluster in a few regions of the probability
//! simplex, and provides the selection strategies (including probability-space
//! coreset selection), the bias-propagation diagnostics, and an experiment
//! runner with CSV/JSON persistence.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod runner;
pub mod selection;
pub mod student;
pub mod teacher;
pub mod verify;

pub use error::{Error, Result};
pub use numerics::ProbVector;
