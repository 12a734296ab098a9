//! Asymptotic travelling waves of the optimal-velocity car-following model
//! on a ring road, and the numerical machinery to check them.

pub mod asymwave;
pub mod diagnostics;
pub mod error;
pub mod ovsim;
pub mod paramspace;
pub mod quadrature;
pub mod quartic;
pub mod specfun;

pub use error::{Error, Result};
