//! Adversarially robust feature-aware explainable recommendation.
//!
//! The crate builds user/item aspect matrices from sentiment-annotated
//! reviews, trains EFM and CER recommenders with an FGSM defense term on the
//! item-aspect matrix, attacks trained weights with a norm-bounded gradient
//! step, and measures ranking and explanation quality before and after.

pub mod aspects;
pub mod dataset;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod harness;
pub mod models;
pub mod robustness;
pub mod rng;

pub use error::{Error, Result};
