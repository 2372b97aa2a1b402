//! Maximum-likelihood drift estimation for X(t) = θt + σB^{H1}(t) + B^{H2}(t)
//! with ½ < H1 < H2 < 1.

pub mod closed_form;
pub mod error;
pub mod estimator;
pub mod fredholm;
pub mod harness;
pub mod gaussian_sim;
pub mod kernels;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
