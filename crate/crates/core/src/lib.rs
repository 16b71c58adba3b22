//! Neural optimal transport between probability measures on a function space,
//! represented through truncated spectral coefficients.

pub mod autodiff;
pub mod check;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod models;
pub mod ot_eval;
pub mod plot;
pub mod rng;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
