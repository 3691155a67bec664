//! Synthetic marketplace simulator.

pub mod experiment;
pub mod world;
