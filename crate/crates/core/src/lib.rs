//! Reliability evaluation, post-hoc calibration and uncertainty-aware
//! training for voxel occupancy predictions.

pub mod calib;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod occ;
pub mod par;
pub mod rng;
pub mod toynet;
pub mod uncert;

pub use error::{Error, Result};
