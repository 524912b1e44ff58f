//! Saturation experiment for one-hidden-layer ReLU networks.
//!
//! Standard mode trains without constraints. Dense mode clamps every
//! parameter of a layer with fan-in `d` into `[-10/d, 10/d]` after each Adam
//! step, a practical proxy for bounded strongly dense networks.

pub mod adam;
pub mod data;
pub mod error;
pub mod mlp;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
