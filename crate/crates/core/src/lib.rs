//! Smoothing of partially observed diffusions with guided proposals.

pub mod error;
pub mod filter;
pub mod guided;
pub mod model;
pub mod numerics;
pub mod reference;
pub mod simulate;
pub mod smoother;
pub mod verify;

pub use error::{Error, Result};
