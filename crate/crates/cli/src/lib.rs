//! Library surface of the design pipeline so integration tests can drive
//! runs without spawning the binary.

pub mod artifacts;
pub mod config;
pub mod pipeline;
