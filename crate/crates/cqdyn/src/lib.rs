//! Hybrid classical-quantum dynamics of quadratic systems.

pub mod error;
pub mod phasespace;
pub mod sudarshan;
pub mod wigner;

pub use error::{Error, Result};
