//! Variance-weighted data assimilation.

pub mod error;
pub mod fusion;
pub mod integrator;
pub mod models;
pub mod piecewise;
pub mod runoff;
pub mod twin;
pub mod io;
pub mod cli;

pub use error::{Error, Result};
