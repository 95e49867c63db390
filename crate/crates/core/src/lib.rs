//! Budget-constrained test allocation for multi-cluster outbreak control.

pub mod allocator;
pub mod baselines;
pub mod belief;
pub mod controllers;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod objective;
pub mod obs;
pub mod params;
pub mod policy;
pub mod rng;
pub mod session;
pub mod sim;
pub mod value;

pub use error::{Error, Result};
