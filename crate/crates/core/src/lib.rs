//! Covariance-based device activity detection for massive MIMO under
//! spatially correlated Rician (near-field) channels.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod lowrank;
pub mod mle;
pub mod poly;
pub mod solver;
pub mod synthesis;

pub use error::{Error, Result};
