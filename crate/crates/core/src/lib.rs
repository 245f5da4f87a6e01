//! Marginal-density smoothing regularization, together with the tooling to
//! train small classifiers with it and evaluate feature leakage,
//! adversarial robustness, attribution quality and OOD detection.

pub mod attacks;
pub mod attribution;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod density_reg;
pub mod error;
pub mod evalrep;
pub mod model;
pub mod training;

pub use autodiff::{backward, Graph, Tensor};
pub use error::{Error, Result};
