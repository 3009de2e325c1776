//! Hybrid LQG / neural controller for a simulated inverted pendulum.

pub mod config;
pub mod error;
pub mod evo;
pub mod harness;
pub mod lqg;
pub mod neural;
pub mod plant;
pub mod rng;
pub mod sim;
pub mod switch;

pub use error::{Error, Result};
