//! Training, characterisation and routed retrieval for a fleet of small
//! sensor-specialised JEPA encoders on a seeded synthetic world.

pub mod agent;
pub mod error;
pub mod fleet;
pub mod geometry;
pub mod interp;
pub mod jepa;
pub mod ndcore;
pub mod synthgen;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use ndcore::{RngStream, Tensor};
