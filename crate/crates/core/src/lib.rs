//! Value-aware model learning for finite MDPs.

pub mod calibration;
pub mod envs;
pub mod harness;
pub mod error;
pub mod losses;
pub mod mdp;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
