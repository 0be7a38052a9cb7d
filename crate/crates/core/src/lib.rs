//! Symbolic regression with logistic-gated operators.

pub mod error;
pub mod audit;
pub mod data;
pub mod experiment;
pub mod export;
pub mod expr;
pub mod metrics;
pub mod ops;
pub mod refine;
pub mod search;
pub mod simplify;
pub mod synth;

pub use error::{AnchorError, ConfigError, DataError, LgoError};
