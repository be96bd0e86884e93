//! Spectral neural operators whose outputs satisfy Dirichlet, Neumann or
//! mixed boundary conditions by construction, plus the classical solvers,
//! training loop and evaluation harness used to check them.

pub mod autodiff;
pub mod container;
pub mod error;
mod fft;
pub mod model;
pub mod oracle;
pub mod par;
pub mod tensor;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::Tensor;
