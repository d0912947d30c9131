//! Parametric Bayesian channel estimation for uniform linear arrays.
//!
//! The crate covers the array and channel model, parameter estimators
//! (Bartlett, root-MUSIC, least-squares gains), the conditional-mean
//! estimator in sampled and asymptotic closed form, analytic MSE bounds,
//! and a Monte-Carlo harness that sweeps scenarios and writes CSV results.

pub mod array_model;
pub mod bounds;
pub mod cme;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod rng;
pub mod sim;
pub mod validation;

pub use error::{Error, Result};
