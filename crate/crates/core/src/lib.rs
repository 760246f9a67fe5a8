//! Learned roll estimation for bevel-tip steerable needles.
//!
//! A simulated needle with torsional lag is steered by a sliding-mode
//! controller. The unsensed tip roll is supplied either by ground truth, by
//! a torsion-blind EKF, or by an LSTM trained on recorded insertions.

pub mod config;
pub mod controller;
pub mod data;
pub mod ekf;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod lstm;
pub mod parallel;
pub mod plant;
pub mod se3;
pub mod seed;

pub use error::{Error, Result};
