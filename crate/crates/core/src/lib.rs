//! Bayesian basket-trial simulation with empirical-Bayes information
//! borrowing and five strategies for delayed binary outcomes at interim
//! analyses.

pub mod borrowing;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod oc;
pub mod rng;
pub mod survival;
pub mod trial;

pub use error::{Error, Result};
