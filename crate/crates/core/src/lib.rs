//! Density control of a swarm on the ring `S = [-π, π)`.
//!
//! Agents interact through an odd pairwise kernel and are steered toward a
//! desired density that itself evolves under the same interactions. The
//! crate provides the discretized macroscopic model, the feedback
//! controller, an agent-level simulator, the error-bound checks, and an
//! experiment harness that writes CSV/TOML/JSON results.

pub mod bounds;
pub mod closed_loop;
pub mod controller;
pub mod convolution;
pub mod density;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod macro_sim;
pub mod micro;
pub mod ring;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
