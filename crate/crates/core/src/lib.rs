//! Wasserstein distributionally robust logistic regression whose ambiguity
//! set is constrained by unlabeled data and label-proportion priors.

pub mod active;
pub mod baseline;
pub mod config;
pub mod data;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod guarantees;
pub mod model;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
