//! Joint attitude, angular-velocity, gyro-bias and star-tracker misalignment
//! estimation with a bank of multiplicative EKFs under multiple-model adaptive
//! estimation.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attitude;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod fusion;
pub mod harness;
pub mod mekf;
pub mod mmae;
pub mod sensors;

pub use error::{Error, Result};
