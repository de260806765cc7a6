//! Simulator for distributed hypothesis testing over social networks under
//! partial, randomly trending belief exchange, together with an executable
//! verification battery for the protocol's convergence and robustness
//! properties.

pub mod beliefs;
pub mod checks;
pub mod config;
pub mod engine;
pub mod error;
pub mod models;
pub mod network;
pub mod numeric;
pub mod rng;

pub use error::{Error, Result};
