//! Inverse design of multilayer optical coatings.
//!
//! The crate bundles a transfer-matrix simulator for planar thin-film stacks,
//! the exponentially shaped design reward, a parameterized-action design
//! environment, a small dense-network toolkit, the multi-pass deep Q-learning
//! agent that stacks layers one at a time, a discretized Q-learning baseline,
//! and the analysis tools used to inspect a trained agent's value estimates.

pub mod agent;
pub mod analysis;
pub mod baseline;
pub mod env;
pub mod error;
pub mod nn;
pub mod objective;
pub mod optics;

pub use error::{Error, Result};
