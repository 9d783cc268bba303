//! Confidence calibration toolkit for question-answering language models.
//!
//! The crate trains a small auxiliary network that maps text-derived features
//! of a question/answer pair to a confidence estimate, using cluster-level
//! accuracy over embedded questions as the regression target. Around that
//! core it provides the supporting machinery: corpus handling, a model
//! gateway with recorded fixtures, answer grading, density-based clustering,
//! baseline confidence estimators, calibration metrics, and report output.

pub mod baselines;
pub mod calibrator;
pub mod clustering;
pub mod corpus;
pub mod error;
mod exec;
pub mod gateway;
pub mod grading;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod seed;
#[cfg(any(test, feature = "test-util"))]
pub mod testing;

pub use error::{Error, Result};
