//! Simulation toolkit for TDOA-based UWB indoor positioning: pulse and
//! multipath synthesis, sequential (equivalent-time) and compressed-sensing
//! acquisition, sparse recovery, arrival detection, and an iterative TDOA
//! position solver, plus the Monte Carlo harness that drives them.

pub mod acquisition;
pub mod arrival;
pub mod config;
pub mod error;
pub mod harness;
pub mod pipeline;
pub mod recovery;
pub mod selftest;
pub mod sequential;
pub mod signal;
pub mod tdoa;

pub use error::{Error, Result};
