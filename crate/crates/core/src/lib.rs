//! Numerical evidence for incremental stability, convergent dynamics and
//! contraction of discrete-time, time-varying systems `x(k+1) = f(k, x(k))`.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod contraction;
pub mod convergent;
pub mod dsl;
pub mod dynamics;
pub mod error;
pub mod incremental;
pub mod matrix;
pub mod registry;
pub mod report;
pub mod sampling;
pub mod verdict;
