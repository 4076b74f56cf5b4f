//! Weighted multistate estimation and pseudo-value regression for clustered
//! data whose cluster size may carry information about the outcome.

pub mod cli;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod linear_oracle;
pub mod panel;
pub mod pseudovalues;
pub mod regression;
pub mod simulation;
pub mod step;

pub use error::{Error, Result};
