//! Online revenue maximization under per-resource lower and upper cost bounds,
//! solved by dual mirror descent with a pluggable parameter learner.

// `!(x >= 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod bidding;
pub mod config;
pub mod controller;
pub mod error;
pub mod fmt;
pub mod learners;
pub mod metrics;
pub mod mirror;
pub mod oracle;
pub mod problem;
pub mod rng;

pub use error::{Error, Result};
