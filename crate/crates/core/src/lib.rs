//! Augmented-state ensemble Kalman filters for joint state and parameter
//! estimation, with Lorenz-96 truth models and a learnable surrogate.

pub mod augmented;
pub mod dynamics;
pub mod error;
pub mod filters;
pub mod harness;
pub mod localisation;
pub mod numkit;
pub mod obs;

pub use error::{Error, Result};
