//! Causal face-centric video stabilization.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod gyro;
pub mod metrics;
pub mod objective;
pub mod par;
pub mod pipeline;
pub mod protrusion;
pub mod scenario;
pub mod scheduler;
pub mod solver;
pub mod trace;
pub mod trajectory;

pub use error::{Error, Result};
