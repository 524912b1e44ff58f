//! Dense networks viewed as computational kernels on `[0, 1]^2`.
//!
//! A fixed-width network with parameters bounded by `B` induces a step kernel
//! whose message passing network reproduces the forward pass. Cut norms
//! measure the distance between such kernels, a constructive weak regularity
//! procedure compresses them, and `bounds` evaluates the capacity formulas
//! that come with the construction.

pub mod bounds;
pub mod compress;
pub mod computational;
pub mod cutnorm;
pub mod error;
pub mod io;
pub mod kernel;
pub mod layers;
pub mod net;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod partition;
pub mod propagation;
pub mod regularity;

pub use error::{Error, Result};
