//! Support code for the `densecap` binary and its acceptance suite.

pub mod checks;
pub mod config;
