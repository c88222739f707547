//! Driving policies trained in a toy simulator and transferred to a
//! photo-like domain through image-to-image translation.

pub mod a3c;
pub mod config;
pub mod error;
pub mod eval;
pub mod gan;
pub mod nets;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
