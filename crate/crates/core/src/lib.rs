//! Sampling-based approximations of the matrix products inside MLP training:
//! node selection by dropout, adaptive dropout and asymmetric LSH, and
//! Monte-Carlo estimates of the backpropagation products.

pub mod alsh;
pub mod analysis;
pub mod data;
mod error;
pub mod linalg;
pub mod mc;
pub mod nn;
pub mod policy;

pub use error::{Error, Result};
