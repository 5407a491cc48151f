//! Numerical laboratory for reaction-diffusion equations on thin channels and their
//! one-dimensional Sturm-Liouville limit.

pub mod error;
pub mod expansion;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod manifold;
pub mod nonlinearity;
pub mod operators;
pub mod semiflow;
pub mod shadowing;

pub use error::{LabError, Result};
