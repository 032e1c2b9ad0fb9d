//! Numerical laboratory for Schrodinger evolution along the shifted curves
//! `x - sqrt(t) mu`: sampled fields, the shifted propagator, wave packets,
//! broad norms, polynomial partitioning and tube geometry.

pub mod broadnorm;
pub mod cli;
pub mod error;
pub mod fft;
pub mod field;
pub mod partition;
pub mod propagator;
pub mod sweeps;
pub mod tube_geometry;
pub mod wavepacket;

pub use error::{LabError, Result};
